#pragma once

// CLI orchestration: manifests, the reconstruct chain (back-project ->
// PnP -> depth alignment -> fusion), batch dataset production, and sequence
// evaluation. Manifests and reports are line-oriented structured text with a
// versioned header.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mars/camera.hpp"
#include "mars/consistency.hpp"
#include "mars/geometry.hpp"
#include "mars/image.hpp"
#include "mars/imgfilter.hpp"
#include "mars/render.hpp"
#include "mars/synthworld.hpp"
#include "mars/trajectory.hpp"

namespace mars {

struct SceneManifest {
  std::string scene_id;
  std::string left_image, right_image;
  std::string intrinsics_pinhole;  // exactly one of these two is set
  std::string intrinsics_cahvor;
  std::string depth_left, depth_right;
  std::string correspondence_file;
  std::string exclusion_list;  // optional precomputed exclusion mask list
  FilterThresholds thresholds;
};

struct SequenceRecord {
  std::string scene_id;
  std::string kind;
  int frame_count = 0;
  std::string output_dir;
  std::string status = "ok";  // ok | rejected:<gate> | error:<stage>
  double warp_l2d = 0.0;
};

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::Dolly;
  double extent = 1.0;
  int frames = 49;
};

// ---------------------------------------------------------------------------
// Manifest parsing. Format:
//   m3ds-manifest v1
//   scene <id>
//   left <path>
//   right <path>
//   intrinsics pinhole|cahvor <path>
//   depth_left <path>
//   depth_right <path>
//   correspondences <path>
//   [exclusions <path>]
//   [threshold <name> <value>]
// Scenes separated by blank lines; paths are relative to the manifest file.

inline std::vector<SceneManifest> load_batch_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingInput("cannot open manifest " + path);
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    return std::filesystem::path(p).is_absolute() ? p : (base / p).string();
  };

  std::string line;
  if (!std::getline(in, line) || line.rfind("m3ds-manifest", 0) != 0)
    throw IoError("manifest " + path + ": missing `m3ds-manifest v1` header");

  std::vector<SceneManifest> scenes;
  SceneManifest cur;
  bool open = false;
  auto flush = [&]() {
    if (!open) return;
    if (cur.intrinsics_pinhole.empty() == cur.intrinsics_cahvor.empty())
      throw IoError("scene " + cur.scene_id + ": exactly one intrinsics source required");
    scenes.push_back(cur);
    cur = SceneManifest{};
    open = false;
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    if (line[0] == '#') continue;
    std::istringstream is(line);
    std::string key;
    is >> key;
    if (key == "scene") {
      flush();
      is >> cur.scene_id;
      open = true;
    } else if (key == "left") {
      std::string p;
      is >> p;
      cur.left_image = resolve(p);
    } else if (key == "right") {
      std::string p;
      is >> p;
      cur.right_image = resolve(p);
    } else if (key == "intrinsics") {
      std::string kind, p;
      is >> kind >> p;
      if (kind == "pinhole")
        cur.intrinsics_pinhole = resolve(p);
      else if (kind == "cahvor")
        cur.intrinsics_cahvor = resolve(p);
      else
        throw IoError("scene " + cur.scene_id + ": unknown intrinsics kind " + kind);
    } else if (key == "depth_left") {
      std::string p;
      is >> p;
      cur.depth_left = resolve(p);
    } else if (key == "depth_right") {
      std::string p;
      is >> p;
      cur.depth_right = resolve(p);
    } else if (key == "correspondences") {
      std::string p;
      is >> p;
      cur.correspondence_file = resolve(p);
    } else if (key == "exclusions") {
      std::string p;
      is >> p;
      cur.exclusion_list = resolve(p);
    } else if (key == "threshold") {
      std::string name;
      double value;
      is >> name >> value;
      if (name == "min_dim") cur.thresholds.min_dim = static_cast<int>(value);
      else if (name == "min_bytes") cur.thresholds.min_bytes = static_cast<long>(value);
      else if (name == "grayscale_var") cur.thresholds.grayscale_var = value;
      else if (name == "max_hamming") cur.thresholds.max_hamming = static_cast<int>(value);
      else if (name == "lap_var") cur.thresholds.lap_var = value;
      else if (name == "spike_bound") cur.thresholds.spike_bound = value;
      else if (name == "entropy_min") cur.thresholds.entropy_min = value;
      else if (name == "entropy_max") cur.thresholds.entropy_max = value;
      else throw IoError("unknown threshold name: " + name);
    } else {
      throw IoError("manifest " + path + ": unknown key " + key);
    }
  }
  flush();
  return scenes;
}

// ---------------------------------------------------------------------------
// Reconstruction

struct ReconstructResult {
  PointCloud cloud;
  PnpResult pnp;
  DepthAlignment alignment;
  Intrinsics intr;
  Pose pose_view1;  // world -> camera; world = view-1 camera frame
  Pose pose_view2;
  DepthMap adjusted_depth_left;
  DepthMap depth_right;
};

struct ReconstructOptions {
  PnpOptions pnp;
  int fuse_stride = 1;
  bool swap_alignment_roles = false;  // adjust view 2 toward view 1 instead
};

namespace detail {

inline void require_file(const std::string& path, const char* what) {
  if (path.empty() || !std::filesystem::exists(path))
    throw MissingInput(std::string(what) + ": missing file " + path);
}

inline double sample_depth_near(const DepthMap& depth, const Pixel& px) {
  const int x = static_cast<int>(std::lround(px.u));
  const int y = static_cast<int>(std::lround(px.v));
  if (x < 0 || y < 0 || x >= depth.width || y >= depth.height) return -1.0;
  if (!depth.is_valid(x, y)) return -1.0;
  return depth.depth(x, y);
}

}  // namespace detail

inline ReconstructResult run_reconstruct(const SceneManifest& scene,
                                         const ReconstructOptions& options = {}) {
  detail::require_file(scene.left_image, "left image");
  detail::require_file(scene.right_image, "right image");
  detail::require_file(scene.depth_left, "left depth");
  detail::require_file(scene.depth_right, "right depth");
  detail::require_file(scene.correspondence_file, "correspondences");

  ReconstructResult result;
  if (!scene.intrinsics_pinhole.empty()) {
    result.intr = load_intrinsics(scene.intrinsics_pinhole);
  } else {
    detail::require_file(scene.intrinsics_cahvor, "intrinsics");
    auto [pose, intr] = cahvor_to_pinhole(load_cahvor(scene.intrinsics_cahvor));
    result.intr = intr;
  }
  Image left = read_png(scene.left_image);
  Image right = read_png(scene.right_image);
  DepthMap depth_left = read_depth_pfm(scene.depth_left);
  DepthMap depth_right = read_depth_pfm(scene.depth_right);
  result.intr.width = left.width;
  result.intr.height = left.height;
  std::vector<Correspondence> corrs = load_correspondences(scene.correspondence_file);

  // Back-project p1 with its view-1 depth; match against p2.
  std::vector<Eigen::Vector3d> points3d;
  std::vector<Pixel> pixels2;
  std::vector<double> d1_samples, d2_samples;
  for (const Correspondence& c : corrs) {
    const double d1 = detail::sample_depth_near(depth_left, c.p1);
    if (d1 <= 0.0) continue;
    points3d.push_back(back_project(c.p1, d1, result.intr));
    pixels2.push_back(c.p2);
    const double d2 = detail::sample_depth_near(depth_right, c.p2);
    if (d2 > 0.0) {
      d1_samples.push_back(d1);
      d2_samples.push_back(d2);
    }
  }
  result.pnp = solve_pnp(points3d, pixels2, result.intr, options.pnp);
  // A pair whose views coincide (no baseline, no rotation) carries no stereo
  // information; abort the scene rather than emit a duplicated cloud.
  const double rel_angle =
      Eigen::AngleAxisd(result.pnp.pose.rotation).angle();
  if (result.pnp.pose.translation.norm() < 1e-9 && rel_angle < 1e-9)
    throw DegenerateConfiguration("run_reconstruct: left and right views coincide");
  result.alignment = align_depth(options.swap_alignment_roles ? d2_samples : d1_samples,
                                 options.swap_alignment_roles ? d1_samples : d2_samples);

  // Adjust view 1 toward view 2 (default role assignment), then fuse.
  result.adjusted_depth_left = depth_left;
  result.depth_right = depth_right;
  if (options.swap_alignment_roles)
    apply_depth_alignment(result.depth_right, result.alignment);
  else
    apply_depth_alignment(result.adjusted_depth_left, result.alignment);

  result.pose_view1 = Pose::Identity();
  result.pose_view2 = result.pnp.pose;  // world = view-1 camera frame
  std::vector<FusionView> views;
  views.push_back({left, result.adjusted_depth_left, result.intr, result.pose_view1, 0});
  views.push_back({right, result.depth_right, result.intr, result.pose_view2, 1});
  result.cloud = fuse_point_clouds(views, options.fuse_stride);
  const std::vector<double> scales = initial_gaussian_scales(result.cloud, views);
  for (size_t i = 0; i < scales.size(); ++i) result.cloud.points[i].scale = scales[i];
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvaluateOptions {
  int grid_stride = 8;
  PairingPolicy policy = PairingPolicy::Consecutive;
  std::string reference_dir;  // optional: reference poses + frames
};

struct EvaluateReport {
  WarpReport warp;
  std::vector<double> frame_psnr;  // vs reference frames, when available
  std::vector<double> frame_ssim;
};

namespace detail {

inline std::vector<std::string> sorted_files(const std::filesystem::path& dir,
                                             const std::string& ext) {
  std::vector<std::string> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ext) files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace detail

inline EvaluateReport run_evaluate(const std::string& sequence_dir,
                                   const EvaluateOptions& options = {}) {
  namespace fs = std::filesystem;
  const fs::path dir(sequence_dir);
  for (const char* sub : {"frames", "depth"})
    if (!fs::is_directory(dir / sub))
      throw LayoutError("sequence layout: missing directory " + (dir / sub).string());
  if (!fs::exists(dir / "poses.txt"))
    throw LayoutError("sequence layout: missing " + (dir / "poses.txt").string());
  if (!fs::exists(dir / "intrinsics.txt"))
    throw LayoutError("sequence layout: missing " + (dir / "intrinsics.txt").string());

  const Intrinsics intr = load_intrinsics((dir / "intrinsics.txt").string());
  const std::vector<Pose> poses = load_poses((dir / "poses.txt").string());
  const std::vector<std::string> depth_files = detail::sorted_files(dir / "depth", ".pfm");
  if (depth_files.size() != poses.size())
    throw LayoutError("sequence layout: depth/pose count mismatch");

  std::vector<FrameGeometry> frames;
  for (size_t i = 0; i < depth_files.size(); ++i)
    frames.push_back(frame_geometry_from_depth(read_depth_pfm(depth_files[i]), intr, poses[i],
                                               options.grid_stride));

  std::optional<std::vector<Pose>> ref_poses;
  if (!options.reference_dir.empty()) {
    const fs::path ref(options.reference_dir);
    if (!fs::exists(ref / "poses.txt"))
      throw LayoutError("reference layout: missing " + (ref / "poses.txt").string());
    ref_poses = load_poses((ref / "poses.txt").string());
    if (ref_poses->size() != frames.size())
      throw LayoutError("reference layout: pose count mismatch");
  }

  EvaluateReport report;
  const auto pairs =
      make_cross_pairs(frames, options.policy, ref_poses ? &*ref_poses : nullptr);
  report.warp = warp_error(frames, pairs);

  if (!options.reference_dir.empty()) {
    const auto seq_frames = detail::sorted_files(dir / "frames", ".png");
    const auto ref_frames =
        detail::sorted_files(fs::path(options.reference_dir) / "frames", ".png");
    const size_t n = std::min(seq_frames.size(), ref_frames.size());
    for (size_t i = 0; i < n; ++i) {
      const FloatImage a = to_float(read_png(seq_frames[i]));
      const FloatImage b = to_float(read_png(ref_frames[i]));
      report.frame_psnr.push_back(psnr(a, b));
      report.frame_ssim.push_back(ssim(a, b));
    }
  }
  return report;
}

inline void write_evaluate_report(const std::string& path, const EvaluateReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "# record\tindex\tvalue\n";
  for (size_t i = 0; i < report.warp.per_frame_self.size(); ++i)
    out << "self\t" << i << "\t" << detail::fmt_double(report.warp.per_frame_self[i]) << "\n";
  for (size_t i = 0; i < report.warp.per_pair_cross.size(); ++i)
    out << "cross\t" << i << "\t" << detail::fmt_double(report.warp.per_pair_cross[i]) << "\n";
  for (size_t i = 0; i < report.frame_psnr.size(); ++i)
    out << "psnr\t" << i << "\t" << detail::fmt_double(report.frame_psnr[i]) << "\n";
  for (size_t i = 0; i < report.frame_ssim.size(); ++i)
    out << "ssim\t" << i << "\t" << detail::fmt_double(report.frame_ssim[i]) << "\n";
  out << "summary\tl_self_avg\t" << detail::fmt_double(report.warp.l_self_avg) << "\n";
  out << "summary\tl_cross_avg\t" << detail::fmt_double(report.warp.l_cross_avg) << "\n";
  out << "summary\tl_2d_reproj\t" << detail::fmt_double(report.warp.l_2d_reproj) << "\n";
}

// ---------------------------------------------------------------------------
// Batch pipeline

struct PipelineOptions {
  std::vector<TrajectorySpec> trajectories;
  ReconstructOptions reconstruct;
  double reference_depth = 10.0;
  int workers = 1;
  uint64_t seed = 0;
};

struct PipelineResult {
  std::vector<SequenceRecord> records;
  size_t scenes_ok = 0;
  size_t scenes_failed = 0;
};

namespace detail {

inline std::vector<SequenceRecord> process_scene(const SceneManifest& scene,
                                                 const std::string& out_dir,
                                                 const PipelineOptions& options) {
  namespace fs = std::filesystem;
  std::vector<SequenceRecord> records;

  // Filter gate: both stereo views must pass. Each view is screened in its
  // own batch: the two views of one scene are near-duplicates by design, so
  // the cross-image dedup gate must not compare them against each other.
  std::vector<QualityReport> reports;
  for (const std::string& path : {scene.left_image, scene.right_image}) {
    auto single = run_filter_pipeline({path}, scene.thresholds);
    reports.push_back(std::move(single.front()));
  }
  for (const QualityReport& rep : reports) {
    if (!rep.keep) {
      SequenceRecord rec;
      rec.scene_id = scene.scene_id;
      rec.kind = "-";
      rec.status = "rejected:" + rep.reject_reason;
      records.push_back(rec);
      return records;
    }
  }

  const ReconstructResult recon = run_reconstruct(scene, options.reconstruct);
  const DepthStats stats = compute_depth_stats(recon.adjusted_depth_left);

  for (const TrajectorySpec& spec : options.trajectories) {
    TrajectoryParams params;
    params.extent = spec.extent;
    params.frames = spec.frames;
    params.look_at_depth = stats.median_depth;
    // Anchor at the view-1 camera (world frame = view-1 camera frame).
    Trajectory traj = canonical_trajectory(spec.kind, params, Pose::Identity());
    traj = depth_adaptive_scale(traj, stats, options.reference_depth);

    const std::vector<Frame> frames = render_sequence(recon.cloud, traj, recon.intr);
    const std::string seq_dir =
        (fs::path(out_dir) / scene.scene_id / to_string(spec.kind)).string();
    write_sequence(seq_dir, frames, recon.intr, describe_motion(traj));
    save_trajectory((fs::path(seq_dir) / "trajectory.txt").string(), traj);

    SequenceRecord rec;
    rec.scene_id = scene.scene_id;
    rec.kind = to_string(spec.kind);
    rec.frame_count = static_cast<int>(frames.size());
    rec.output_dir = seq_dir;
    EvaluateOptions eval_opts;
    const EvaluateReport eval = run_evaluate(seq_dir, eval_opts);
    rec.warp_l2d = eval.warp.l_2d_reproj;
    write_evaluate_report((fs::path(seq_dir) / "metrics.txt").string(), eval);
    records.push_back(rec);
  }
  return records;
}

}  // namespace detail

// Dataset index: one row per sequence record (or rejection), manifest order.
inline void write_index(const std::string& path, const std::vector<SequenceRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "# scene\tkind\tframes\tdir\tstatus\twarp_l2d\n";
  for (const SequenceRecord& rec : records)
    out << rec.scene_id << "\t" << rec.kind << "\t" << rec.frame_count << "\t" << rec.output_dir
        << "\t" << rec.status << "\t" << detail::fmt_double(rec.warp_l2d) << "\n";
}

// Scenes run on a bounded worker pool; per-scene failures are isolated and
// the index is assembled in manifest order.
inline PipelineResult run_pipeline(const std::vector<SceneManifest>& scenes,
                                   const std::string& out_dir,
                                   const PipelineOptions& options) {
  std::filesystem::create_directories(out_dir);
  PipelineResult result;
  std::vector<std::future<std::vector<SequenceRecord>>> futures(scenes.size());
  const int workers = std::max(1, options.workers);

  for (size_t start = 0; start < scenes.size(); start += workers) {
    const size_t end = std::min(scenes.size(), start + workers);
    for (size_t i = start; i < end; ++i)
      futures[i] = std::async(std::launch::async, [&, i]() {
        return detail::process_scene(scenes[i], out_dir, options);
      });
    for (size_t i = start; i < end; ++i) {
      try {
        auto records = futures[i].get();
        bool ok = true;
        for (const SequenceRecord& rec : records) ok = ok && rec.status == "ok";
        (ok ? result.scenes_ok : result.scenes_failed)++;
        for (SequenceRecord& rec : records) result.records.push_back(std::move(rec));
      } catch (const Error& e) {
        SequenceRecord rec;
        rec.scene_id = scenes[i].scene_id;
        rec.kind = "-";
        rec.status = std::string("error:") + e.what();
        result.records.push_back(rec);
        ++result.scenes_failed;
      }
    }
  }
  write_index((std::filesystem::path(out_dir) / "index.txt").string(), result.records);
  return result;
}

}  // namespace mars
