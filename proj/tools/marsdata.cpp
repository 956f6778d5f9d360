// marsdata: stereo-to-video dataset tooling.
//
// Subcommands: filter, convert-camera, reconstruct, trajectory, render,
// evaluate, synth, pipeline. Global flags: --seed, --workers, --out.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mars/camera.hpp"
#include "mars/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

mars::TrajectorySpec parse_traj_spec(const std::string& text) {
  // kind[:extent[:frames]]
  mars::TrajectorySpec spec;
  std::string rest = text;
  const auto take = [&]() {
    const size_t pos = rest.find(':');
    std::string head = rest.substr(0, pos);
    rest = pos == std::string::npos ? std::string() : rest.substr(pos + 1);
    return head;
  };
  spec.kind = mars::trajectory_kind_from_string(take());
  if (!rest.empty()) spec.extent = std::stod(take());
  if (!rest.empty()) spec.frames = std::stoi(take());
  return spec;
}

int cmd_filter(const std::string& manifest, const std::string& out,
               const mars::FilterThresholds& thresholds) {
  const auto paths = mars::read_manifest_lines(manifest);
  const auto reports = mars::run_filter_pipeline(paths, thresholds);
  mars::write_filter_report(out, reports);
  size_t kept = 0;
  for (const auto& r : reports) kept += r.keep ? 1 : 0;
  std::printf("filter: kept %zu of %zu images -> %s\n", kept, reports.size(), out.c_str());
  return 0;
}

int cmd_convert_camera(const std::string& in, const std::string& out,
                       const std::string& pose_out) {
  const auto [pose, intr] = mars::cahvor_to_pinhole(mars::load_cahvor(in));
  mars::save_intrinsics(out, intr);
  if (!pose_out.empty()) mars::save_poses(pose_out, {pose});
  std::printf("convert-camera: fx=%.6f fy=%.6f cx=%.6f cy=%.6f -> %s\n", intr.fx, intr.fy,
              intr.cx, intr.cy, out.c_str());
  return 0;
}

int cmd_reconstruct(const std::string& manifest_path, const std::string& scene_id,
                    const std::string& out_dir, const mars::ReconstructOptions& options) {
  const auto scenes = mars::load_batch_manifest(manifest_path);
  const mars::SceneManifest* scene = nullptr;
  for (const auto& s : scenes)
    if (scene_id.empty() || s.scene_id == scene_id) {
      scene = &s;
      break;
    }
  if (!scene) throw mars::MissingInput("scene not found in manifest: " + scene_id);
  const mars::ReconstructResult result = mars::run_reconstruct(*scene, options);
  fs::create_directories(out_dir);
  mars::save_point_cloud((fs::path(out_dir) / "cloud.txt").string(), result.cloud);
  mars::save_poses((fs::path(out_dir) / "poses.txt").string(),
                   {result.pose_view1, result.pose_view2});
  mars::save_intrinsics((fs::path(out_dir) / "intrinsics.txt").string(), result.intr);
  mars::write_depth_pfm((fs::path(out_dir) / "depth_left_adjusted.pfm").string(),
                        result.adjusted_depth_left);
  std::ofstream report((fs::path(out_dir) / "report.txt").string());
  report << "scale " << mars::detail::fmt_double(result.alignment.s) << "\n"
         << "bias " << mars::detail::fmt_double(result.alignment.b) << "\n"
         << "residual_rms " << mars::detail::fmt_double(result.alignment.residual_rms) << "\n"
         << "pnp_rms " << mars::detail::fmt_double(result.pnp.reprojection_rms) << "\n"
         << "pnp_inliers " << result.pnp.inliers.size() << "\n"
         << "cloud_points " << result.cloud.points.size() << "\n";
  std::printf("reconstruct: %zu points, pnp rms %.3g px -> %s\n", result.cloud.points.size(),
              result.pnp.reprojection_rms, out_dir.c_str());
  return 0;
}

int cmd_trajectory(const std::string& kind, double extent, int frames,
                   const std::string& depth_map, double reference_depth,
                   const std::string& out) {
  mars::TrajectoryParams params;
  params.extent = extent;
  params.frames = frames;
  mars::Trajectory traj =
      mars::canonical_trajectory(mars::trajectory_kind_from_string(kind), params);
  if (!depth_map.empty()) {
    const mars::DepthStats stats = mars::compute_depth_stats(mars::read_depth_pfm(depth_map));
    traj = mars::depth_adaptive_scale(traj, stats, reference_depth);
  }
  mars::save_trajectory(out, traj);
  const fs::path caption_path = fs::path(out).parent_path() / "caption.txt";
  std::ofstream cap(caption_path.string());
  cap << mars::describe_motion(traj) << "\n";
  std::printf("trajectory: %s x%d, scale %.6g -> %s\n", kind.c_str(), frames,
              traj.scale_factor, out.c_str());
  return 0;
}

int cmd_render(const std::string& cloud_path, const std::string& traj_path,
               const std::string& intr_path, const std::string& out_dir, int workers) {
  const mars::PointCloud cloud = mars::load_point_cloud(cloud_path);
  const mars::Trajectory traj = mars::load_trajectory(traj_path);
  const mars::Intrinsics intr = mars::load_intrinsics(intr_path);
  mars::RenderOptions options;
  options.workers = workers;
  const auto frames = mars::render_sequence(cloud, traj, intr, options);
  mars::write_sequence(out_dir, frames, intr, mars::describe_motion(traj));
  std::printf("render: %zu frames -> %s\n", frames.size(), out_dir.c_str());
  return 0;
}

int cmd_evaluate(const std::string& sequence_dir, const std::string& reference_dir,
                 int stride, const std::string& out) {
  mars::EvaluateOptions options;
  options.grid_stride = stride;
  options.reference_dir = reference_dir;
  const mars::EvaluateReport report = mars::run_evaluate(sequence_dir, options);
  mars::write_evaluate_report(out, report);
  std::printf("evaluate: self %.6g cross %.6g combined %.6g -> %s\n", report.warp.l_self_avg,
              report.warp.l_cross_avg, report.warp.l_2d_reproj, out.c_str());
  return 0;
}

int cmd_synth(uint64_t seed, int width, int height, double baseline, int stride,
              const std::string& out_dir) {
  mars::Terrain terrain = mars::generate_terrain(seed);
  mars::StereoRig rig;
  rig.intr.width = width;
  rig.intr.height = height;
  rig.intr.fx = rig.intr.fy = 0.9 * width;
  rig.intr.cx = 0.5 * (width - 1);
  rig.intr.cy = 0.5 * (height - 1);
  rig.baseline = baseline;
  // Perch the camera above the surface looking gently down.
  const double ground = -terrain.height_at(0.0, 0.0);
  rig.camera_to_world.translation = Eigen::Vector3d(0.0, ground - 3.0, -8.0);
  rig.camera_to_world.rotation =
      Eigen::AngleAxisd(-0.35, Eigen::Vector3d::UnitX()).toRotationMatrix();
  const mars::StereoCapture cap = mars::simulate_stereo_capture(terrain, rig, stride);

  fs::create_directories(fs::path(out_dir) / "frames");
  fs::create_directories(fs::path(out_dir) / "depth");
  fs::create_directories(fs::path(out_dir) / "truth");
  mars::write_png((fs::path(out_dir) / "frames" / "00000.png").string(), cap.left);
  mars::write_png((fs::path(out_dir) / "frames" / "00001.png").string(), cap.right);
  mars::write_depth_pfm((fs::path(out_dir) / "depth" / "00000.pfm").string(), cap.depth_left);
  mars::write_depth_pfm((fs::path(out_dir) / "depth" / "00001.pfm").string(), cap.depth_right);
  mars::save_poses((fs::path(out_dir) / "poses.txt").string(), {cap.pose_left, cap.pose_right});
  mars::save_intrinsics((fs::path(out_dir) / "intrinsics.txt").string(), cap.intr);
  mars::save_correspondences((fs::path(out_dir) / "truth" / "correspondences.txt").string(),
                             cap.correspondences);
  std::ofstream cap_file((fs::path(out_dir) / "caption.txt").string());
  cap_file << "A stereo pair of a rocky Mars-like surface.\n";
  // A ready-to-use batch manifest so the output feeds straight into
  // `reconstruct` and `pipeline`. Synthetic renders are known-clean but very
  // smooth, so the content gates are relaxed.
  std::ofstream manifest((fs::path(out_dir) / "manifest.txt").string());
  manifest << "m3ds-manifest v1\n"
           << "scene synth-" << seed << "\n"
           << "left frames/00000.png\n"
           << "right frames/00001.png\n"
           << "intrinsics pinhole intrinsics.txt\n"
           << "depth_left depth/00000.pfm\n"
           << "depth_right depth/00001.pfm\n"
           << "correspondences truth/correspondences.txt\n"
           << "threshold min_bytes 1\n"
           << "threshold lap_var 0\n";
  std::printf("synth: %d x %d stereo pair, %zu correspondences -> %s\n", width, height,
              cap.correspondences.size(), out_dir.c_str());
  return 0;
}

int cmd_pipeline(const std::string& manifest_path, const std::vector<std::string>& traj_specs,
                 const std::string& out_dir, uint64_t seed, int workers) {
  mars::PipelineOptions options;
  options.seed = seed;
  options.workers = workers;
  if (traj_specs.empty()) {
    options.trajectories = {parse_traj_spec("dolly:0.6:25"), parse_traj_spec("truck:0.6:25"),
                            parse_traj_spec("pan:0.35:25")};
  } else {
    for (const std::string& t : traj_specs) options.trajectories.push_back(parse_traj_spec(t));
  }
  const auto scenes = mars::load_batch_manifest(manifest_path);
  const mars::PipelineResult result = mars::run_pipeline(scenes, out_dir, options);
  std::printf("pipeline: %zu scenes ok, %zu failed; %zu records -> %s\n", result.scenes_ok,
              result.scenes_failed, result.records.size(), out_dir.c_str());
  if (result.scenes_ok == 0 && result.scenes_failed > 0) return 1;
  if (result.scenes_failed > 0) return 2;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stereo-imagery dataset tooling: quality filtering, camera conversion, "
               "reconstruction, trajectory synthesis, rendering, and evaluation."};
  app.require_subcommand(1);
  app.fallthrough();

  uint64_t seed = 0;
  int workers = 1;
  std::string out;
  app.add_option("--seed", seed, "PRNG seed for all seeded stages");
  app.add_option("--workers", workers, "worker thread count");
  app.add_option("--out", out, "output file or directory");

  // filter
  auto* filter = app.add_subcommand("filter", "apply quality gates to an image manifest");
  std::string manifest;
  mars::FilterThresholds thresholds;
  filter->add_option("--manifest", manifest, "one image path per line")->required();
  filter->add_option("--min-dim", thresholds.min_dim);
  filter->add_option("--min-bytes", thresholds.min_bytes);
  filter->add_option("--grayscale-var", thresholds.grayscale_var);
  filter->add_option("--max-hamming", thresholds.max_hamming);
  filter->add_option("--lap-var", thresholds.lap_var);
  filter->add_option("--spike-bound", thresholds.spike_bound);
  filter->add_option("--entropy-min", thresholds.entropy_min);
  filter->add_option("--entropy-max", thresholds.entropy_max);

  // convert-camera
  auto* convert = app.add_subcommand("convert-camera", "convert a CAHVOR model to pinhole");
  std::string cahvor_in, pose_out;
  convert->add_option("--cahvor", cahvor_in, "CAHVOR text file")->required();
  convert->add_option("--pose-out", pose_out, "also write the recovered extrinsics");

  // reconstruct
  auto* reconstruct = app.add_subcommand("reconstruct", "stereo pair -> fused point cloud");
  std::string scene_id;
  mars::ReconstructOptions recon_options;
  reconstruct->add_option("--manifest", manifest, "batch manifest")->required();
  reconstruct->add_option("--scene", scene_id, "scene id (default: first scene)");
  reconstruct->add_option("--stride", recon_options.fuse_stride, "fusion pixel stride");
  reconstruct->add_option("--ransac-threshold", recon_options.pnp.ransac_threshold);
  reconstruct->add_flag("--swap-alignment", recon_options.swap_alignment_roles,
                        "adjust view 2 toward view 1 instead of the default");

  // trajectory
  auto* trajectory = app.add_subcommand("trajectory", "emit a virtual camera trajectory");
  std::string kind = "dolly", depth_map;
  double extent = 1.0, reference_depth = 10.0;
  int frames = 49;
  trajectory->add_option("--kind", kind, "orbit|dolly|truck|pan|spiral|boom");
  trajectory->add_option("--extent", extent, "meters (translation) or radians (rotation)");
  trajectory->add_option("--frames", frames);
  trajectory->add_option("--depth-map", depth_map, "PFM depth for depth-adaptive scaling");
  trajectory->add_option("--reference-depth", reference_depth);

  // render
  auto* render = app.add_subcommand("render", "splat a point cloud along a trajectory");
  std::string cloud_path, traj_path, intr_path;
  render->add_option("--cloud", cloud_path, "point cloud text file")->required();
  render->add_option("--trajectory", traj_path, "trajectory file")->required();
  render->add_option("--intrinsics", intr_path, "pinhole intrinsics file")->required();

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "geometric + photometric sequence metrics");
  std::string sequence_dir, reference_dir;
  int eval_stride = 8;
  evaluate->add_option("--sequence", sequence_dir, "rendered sequence directory")->required();
  evaluate->add_option("--reference", reference_dir, "reference sequence directory");
  evaluate->add_option("--stride", eval_stride, "pixel stride for the evaluation grid");

  // synth
  auto* synth = app.add_subcommand("synth", "procedural stereo capture with exact geometry");
  int synth_width = 256, synth_height = 256, synth_stride = 8;
  double synth_baseline = 0.3;
  synth->add_option("--width", synth_width);
  synth->add_option("--height", synth_height);
  synth->add_option("--baseline", synth_baseline, "stereo baseline in meters");
  synth->add_option("--stride", synth_stride, "correspondence grid stride");

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "filter -> reconstruct -> render -> evaluate");
  std::vector<std::string> pipeline_trajs;
  pipeline->add_option("--manifest", manifest, "batch manifest")->required();
  pipeline->add_option("--trajectory", pipeline_trajs,
                       "kind[:extent[:frames]] (repeatable; default dolly/truck/pan)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*filter) return cmd_filter(manifest, out.empty() ? "filter_report.txt" : out, thresholds);
    if (*convert) return cmd_convert_camera(cahvor_in, out.empty() ? "intrinsics.txt" : out, pose_out);
    if (*reconstruct)
      return cmd_reconstruct(manifest, scene_id, out.empty() ? "reconstruction" : out, recon_options);
    if (*trajectory)
      return cmd_trajectory(kind, extent, frames, depth_map, reference_depth,
                            out.empty() ? "trajectory.txt" : out);
    if (*render) return cmd_render(cloud_path, traj_path, intr_path,
                                   out.empty() ? "sequence" : out, workers);
    if (*evaluate)
      return cmd_evaluate(sequence_dir, reference_dir, eval_stride,
                          out.empty() ? "metrics.txt" : out);
    if (*synth) return cmd_synth(seed, synth_width, synth_height, synth_baseline, synth_stride,
                                 out.empty() ? "capture" : out);
    if (*pipeline) return cmd_pipeline(manifest, pipeline_trajs, out.empty() ? "dataset" : out,
                                       seed, workers);
  } catch (const mars::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
