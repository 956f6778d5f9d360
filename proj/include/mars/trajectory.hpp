#pragma once

// Virtual-camera trajectory synthesis: six canonical motion kinds,
// depth-adaptive scaling, slerp interpolation, and rule-based motion
// captions. Poses are camera->world; the camera looks along +z of its own
// frame with x right and y down (image convention).

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mars/camera.hpp"
#include "mars/image.hpp"

namespace mars {

enum class TrajectoryKind { Orbit, Dolly, Truck, Pan, Spiral, Boom };

inline std::string to_string(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::Orbit: return "orbit";
    case TrajectoryKind::Dolly: return "dolly";
    case TrajectoryKind::Truck: return "truck";
    case TrajectoryKind::Pan: return "pan";
    case TrajectoryKind::Spiral: return "spiral";
    case TrajectoryKind::Boom: return "boom";
  }
  return "unknown";
}

inline TrajectoryKind trajectory_kind_from_string(const std::string& s) {
  if (s == "orbit") return TrajectoryKind::Orbit;
  if (s == "dolly") return TrajectoryKind::Dolly;
  if (s == "truck") return TrajectoryKind::Truck;
  if (s == "pan") return TrajectoryKind::Pan;
  if (s == "spiral") return TrajectoryKind::Spiral;
  if (s == "boom") return TrajectoryKind::Boom;
  throw UnknownKind("unknown trajectory kind: " + s);
}

struct Trajectory {
  TrajectoryKind kind = TrajectoryKind::Dolly;
  std::vector<Pose> poses;        // camera -> world
  std::vector<double> timestamps; // strictly increasing, t = 1..N
  double scale_factor = 1.0;
};

struct DepthStats {
  double median_depth = 0.0;
  double p10_depth = 0.0;
  double p90_depth = 0.0;
};

inline DepthStats compute_depth_stats(const DepthMap& depth) {
  std::vector<float> vals;
  for (size_t i = 0; i < depth.values.size(); ++i)
    if (depth.valid[i]) vals.push_back(depth.values[i]);
  if (vals.empty()) throw BadParams("compute_depth_stats: no valid depth pixels");
  std::sort(vals.begin(), vals.end());
  auto pct = [&](double p) { return vals[std::min(vals.size() - 1, static_cast<size_t>(p * vals.size()))]; };
  DepthStats stats;
  stats.p10_depth = pct(0.10);
  stats.median_depth = pct(0.50);
  stats.p90_depth = pct(0.90);
  return stats;
}

struct TrajectoryParams {
  double extent = 1.0;        // meters for translational kinds, radians for pan/orbit
  int frames = 49;
  double look_at_depth = 10.0;  // orbit/spiral pivot distance along the view axis
};

namespace detail {

inline Eigen::Matrix3d yaw_rotation(double angle) {
  // Rotation about the camera y axis; positive angle turns the view toward
  // +x (to the right in the y-down image convention): R_y(a) e_z has a
  // positive x component.
  return Eigen::AngleAxisd(angle, Eigen::Vector3d::UnitY()).toRotationMatrix();
}

}  // namespace detail

inline Trajectory canonical_trajectory(TrajectoryKind kind, const TrajectoryParams& params,
                                       const Pose& anchor = Pose::Identity()) {
  if (params.frames < 2) throw BadParams("canonical_trajectory: need at least 2 frames");
  if (!(params.extent > 0.0)) throw BadParams("canonical_trajectory: extent must be > 0");

  Trajectory traj;
  traj.kind = kind;
  const int n = params.frames;
  const Eigen::Vector3d view_axis = anchor.rotation.col(2);   // camera +z in world
  const Eigen::Vector3d right_axis = anchor.rotation.col(0);  // camera +x in world
  const Eigen::Vector3d down_axis = anchor.rotation.col(1);   // camera +y in world
  const Eigen::Vector3d pivot = anchor.translation + params.look_at_depth * view_axis;

  for (int i = 0; i < n; ++i) {
    const double f = static_cast<double>(i) / (n - 1);
    Pose pose = anchor;
    switch (kind) {
      case TrajectoryKind::Dolly:
        pose.translation += f * params.extent * view_axis;
        break;
      case TrajectoryKind::Truck:
        pose.translation += f * params.extent * right_axis;
        break;
      case TrajectoryKind::Boom:
        pose.translation -= f * params.extent * down_axis;  // positive extent moves up
        break;
      case TrajectoryKind::Pan: {
        pose.rotation = anchor.rotation * detail::yaw_rotation(f * params.extent);
        break;
      }
      case TrajectoryKind::Orbit:
      case TrajectoryKind::Spiral: {
        // Rotate the camera about a vertical axis through the pivot so that
        // the pivot stays on the optical axis each frame.
        const Eigen::Matrix3d orbit_rot =
            Eigen::AngleAxisd(-f * params.extent, down_axis).toRotationMatrix();
        pose.rotation = orbit_rot * anchor.rotation;
        pose.translation = pivot + orbit_rot * (anchor.translation - pivot);
        if (kind == TrajectoryKind::Spiral) {
          // dolly toward the pivot: shrink the radius by 30% across the path
          const Eigen::Vector3d to_pivot = pivot - pose.translation;
          pose.translation += 0.3 * f * to_pivot;
        }
        break;
      }
    }
    traj.poses.push_back(pose);
    traj.timestamps.push_back(static_cast<double>(i + 1));
  }
  return traj;
}

// Scale every displacement from the first pose (and thereby orbit radii) by
// median_depth / reference_depth, clamped to [0.05, 20]. Rotations unchanged.
inline Trajectory depth_adaptive_scale(const Trajectory& traj, const DepthStats& stats,
                                       double reference_depth = 10.0) {
  if (!(stats.median_depth > 0.0) || !(reference_depth > 0.0))
    throw BadParams("depth_adaptive_scale: depths must be > 0");
  const double factor = std::clamp(stats.median_depth / reference_depth, 0.05, 20.0);
  Trajectory out = traj;
  out.scale_factor = traj.scale_factor * factor;
  if (traj.poses.empty()) return out;
  const Eigen::Vector3d origin = traj.poses.front().translation;
  for (Pose& pose : out.poses)
    pose.translation = origin + factor * (pose.translation - origin);
  return out;
}

// Slerp on rotations, linear interpolation on translations; exact at keys.
inline Pose interpolate_pose(const Trajectory& traj, double t) {
  if (traj.poses.size() < 2) throw BadParams("interpolate_pose: trajectory too short");
  if (t < traj.timestamps.front() || t > traj.timestamps.back())
    throw OutOfRange("interpolate_pose: t outside trajectory span");
  size_t hi = 1;
  while (hi < traj.timestamps.size() - 1 && traj.timestamps[hi] < t) ++hi;
  const size_t lo = hi - 1;
  if (t == traj.timestamps[lo]) return traj.poses[lo];
  if (t == traj.timestamps[hi]) return traj.poses[hi];
  const double f = (t - traj.timestamps[lo]) / (traj.timestamps[hi] - traj.timestamps[lo]);
  Eigen::Quaterniond qa(traj.poses[lo].rotation);
  Eigen::Quaterniond qb(traj.poses[hi].rotation);
  Pose out;
  out.rotation = qa.slerp(f, qb).normalized().toRotationMatrix();
  out.translation =
      (1.0 - f) * traj.poses[lo].translation + f * traj.poses[hi].translation;
  return out;
}

// ---------------------------------------------------------------------------
// Motion captions. Deterministic rule table over the net motion expressed in
// the anchor (first-pose) camera frame; orbit-family trajectories keep their
// orbit phrasing so captions survive temporal resampling.

inline std::string describe_motion(const Trajectory& traj) {
  if (traj.poses.size() < 2) return "The camera is static.";
  const Pose& first = traj.poses.front();
  const Pose& last = traj.poses.back();

  // Net displacement in the anchor camera frame.
  const Eigen::Vector3d d = first.rotation.transpose() * (last.translation - first.translation);
  // Net rotation relative to the anchor.
  const Eigen::Matrix3d r_rel = first.rotation.transpose() * last.rotation;
  const Eigen::AngleAxisd aa(r_rel);
  const double angle = aa.angle();
  const Eigen::Vector3d axis = aa.axis();

  const double trans_eps = 1e-6;
  const double rot_eps = 1e-6;

  std::string move;
  if (d.norm() > trans_eps) {
    int dominant = 0;
    d.cwiseAbs().maxCoeff(&dominant);
    static const char* names[3][2] = {{"left", "right"}, {"up", "down"}, {"backward", "forward"}};
    move = names[dominant][d[dominant] > 0 ? 1 : 0];
  }

  std::string turn;
  if (angle > rot_eps) {
    int dominant = 0;
    axis.cwiseAbs().maxCoeff(&dominant);
    const double signed_angle = axis[dominant] > 0 ? angle : -angle;
    if (dominant == 1) {
      // rotation about camera y: positive = pan right (view tips toward +x)
      turn = signed_angle > 0 ? "pans right" : "pans left";
    } else if (dominant == 0) {
      // rotation about camera x: positive tips the view toward -y, i.e. up
      turn = signed_angle > 0 ? "tilts up" : "tilts down";
    } else {
      turn = signed_angle > 0 ? "rolls counterclockwise" : "rolls clockwise";
    }
  }

  if (traj.kind == TrajectoryKind::Orbit || traj.kind == TrajectoryKind::Spiral) {
    // Orbit family: camera revolves about a fixed look-at point.
    const Eigen::Vector3d radial_first = first.rotation.col(2);
    const Eigen::Vector3d radial_last = last.rotation.col(2);
    const bool approaching = traj.kind == TrajectoryKind::Spiral;
    (void)radial_first;
    (void)radial_last;
    return approaching ? "The camera orbits while moving forward."
                       : "The camera orbits around the scene.";
  }

  if (!move.empty() && !turn.empty())
    return "The camera moves " + move + " while it " + turn + ".";
  if (!move.empty()) return "The camera moves " + move + ".";
  if (!turn.empty()) return "The camera " + turn + ".";
  return "The camera is static.";
}

// ---------------------------------------------------------------------------
// File format: header `kind N scale_factor`, then one row-major 3x4
// camera->world pose per line.

inline void save_trajectory(const std::string& path, const Trajectory& traj) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << to_string(traj.kind) << " " << traj.poses.size() << " "
      << detail::fmt_double(traj.scale_factor) << "\n";
  for (const Pose& p : traj.poses) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) out << detail::fmt_double(p.rotation(r, c)) << " ";
      out << detail::fmt_double(p.translation[r]);
      out << (r == 2 ? "\n" : " ");
    }
  }
}

inline Trajectory load_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string kind;
  size_t n = 0;
  Trajectory traj;
  if (!(in >> kind >> n >> traj.scale_factor)) throw IoError("bad trajectory header: " + path);
  traj.kind = trajectory_kind_from_string(kind);
  for (size_t i = 0; i < n; ++i) {
    Pose p;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c)
        if (!(in >> p.rotation(r, c))) throw IoError("truncated trajectory: " + path);
      if (!(in >> p.translation[r])) throw IoError("truncated trajectory: " + path);
    }
    traj.poses.push_back(p);
    traj.timestamps.push_back(static_cast<double>(i + 1));
  }
  return traj;
}

}  // namespace mars
