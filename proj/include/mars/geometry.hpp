#pragma once

// Metric reconstruction core: PnP pose estimation (DLT initialization +
// Gauss-Newton refinement inside a seeded RANSAC loop), closed-form depth
// scale/bias alignment, world-frame point-cloud fusion, and per-point
// Gaussian scale initialization.

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <vector>

#include "mars/camera.hpp"
#include "mars/image.hpp"

namespace mars {

struct Correspondence {
  Pixel p1;
  Pixel p2;
  double weight = 1.0;
};

struct PnpOptions {
  double ransac_threshold = 2.0;  // px; <= 0 disables RANSAC (all points used)
  int max_iterations = 100;       // Gauss-Newton iterations
  int max_hypotheses = 1000;
  uint64_t seed = 0;
};

struct PnpResult {
  Pose pose;  // view1 camera frame -> view2 camera frame
  std::vector<uint8_t> inliers;
  double reprojection_rms = 0.0;
  int iterations = 0;
  std::vector<double> cost_history;  // summed squared residuals per GN iteration
};

struct DepthAlignment {
  double s = 1.0;
  double b = 0.0;
  double residual_rms = 0.0;
  size_t sample_count = 0;
};

struct CloudPoint {
  Eigen::Vector3d position;  // world frame
  std::array<uint8_t, 3> color{0, 0, 0};
  int view_id = 0;
  Pixel source_pixel;
  double cam_depth = 0.0;
  double scale = -1.0;  // meters; < 0 when unset
};

struct PointCloud {
  std::vector<CloudPoint> points;
};

struct FusionView {
  Image image;
  DepthMap depth;
  Intrinsics intr;
  Pose world_to_camera;
  int view_id = 0;
};

// ---------------------------------------------------------------------------
// Reprojection residuals

struct ResidualReport {
  std::vector<double> residuals;  // px; NaN for behind-camera points
  double rms = 0.0;
  size_t behind_camera = 0;
};

inline ResidualReport reprojection_residuals(const Pose& pose, const Intrinsics& intr,
                                             const std::vector<Eigen::Vector3d>& points3d,
                                             const std::vector<Pixel>& pixels2) {
  if (points3d.size() != pixels2.size())
    throw ShapeMismatch("reprojection_residuals: size mismatch");
  ResidualReport rep;
  rep.residuals.resize(points3d.size());
  double sum2 = 0.0;
  size_t n = 0;
  for (size_t i = 0; i < points3d.size(); ++i) {
    const Eigen::Vector3d q = pose.apply(points3d[i]);
    if (!(q.z() > 0.0)) {
      rep.residuals[i] = std::numeric_limits<double>::quiet_NaN();
      ++rep.behind_camera;
      continue;
    }
    const Pixel proj = project_distorted(q, intr);
    const double du = pixels2[i].u - proj.u;
    const double dv = pixels2[i].v - proj.v;
    rep.residuals[i] = std::hypot(du, dv);
    sum2 += du * du + dv * dv;
    ++n;
  }
  rep.rms = n ? std::sqrt(sum2 / n) : 0.0;
  return rep;
}

namespace detail {

// Normalized (undistorted) image-plane observation.
inline Eigen::Vector2d normalized_obs(const Pixel& px, const Intrinsics& intr) {
  Eigen::Vector2d xn((px.u - intr.cx) / intr.fx, (px.v - intr.cy) / intr.fy);
  if (intr.has_distortion()) xn = undistort(xn, intr.k0, intr.k1, intr.k2);
  return xn;
}

// DLT estimate of [R|t] from >= 6 normalized 2D-3D correspondences.
inline Pose pnp_dlt(const std::vector<Eigen::Vector3d>& pts,
                    const std::vector<Eigen::Vector2d>& obs, const std::vector<size_t>& idx) {
  Eigen::MatrixXd a(2 * idx.size(), 12);
  for (size_t r = 0; r < idx.size(); ++r) {
    const Eigen::Vector3d& p = pts[idx[r]];
    const Eigen::Vector2d& x = obs[idx[r]];
    a.row(2 * r) << p.x(), p.y(), p.z(), 1, 0, 0, 0, 0, -x.x() * p.x(), -x.x() * p.y(),
        -x.x() * p.z(), -x.x();
    a.row(2 * r + 1) << 0, 0, 0, 0, p.x(), p.y(), p.z(), 1, -x.y() * p.x(), -x.y() * p.y(),
        -x.y() * p.z(), -x.y();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinV);
  // A near-zero gap between the two smallest singular values means the
  // solution is not unique (collinear / coplanar-through-center points).
  const auto& sv = svd.singularValues();
  if (sv[sv.size() - 2] < 1e-10 * sv[0])
    throw DegenerateConfiguration("solve_pnp: degenerate point configuration");
  const Eigen::VectorXd h = svd.matrixV().col(11);
  Eigen::Matrix<double, 3, 4> m;
  m << h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8], h[9], h[10], h[11];

  // Cheirality: pick the overall sign so that most points project with
  // positive depth, before extracting the rotation.
  size_t front = 0;
  for (size_t i : idx) {
    const double w = m(2, 0) * pts[i].x() + m(2, 1) * pts[i].y() + m(2, 2) * pts[i].z() + m(2, 3);
    if (w > 0) ++front;
  }
  if (front * 2 < idx.size()) m = -m;

  // Project the left 3x3 block onto SO(3) and recover the common scale.
  Eigen::Matrix3d mr = m.leftCols<3>();
  Eigen::JacobiSVD<Eigen::Matrix3d> rs(mr, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const double scale = rs.singularValues().mean();
  Eigen::Matrix3d rot = rs.matrixU() * rs.matrixV().transpose();
  if (rot.determinant() < 0) {
    Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
    flip(2, 2) = -1;
    rot = rs.matrixU() * flip * rs.matrixV().transpose();
  }
  Pose pose;
  pose.rotation = rot;
  pose.translation = m.col(3) / scale;
  return pose;
}

// Summed squared pixel residuals over the active (in-front) subset.
inline double pnp_cost(const Pose& pose, const std::vector<Eigen::Vector3d>& pts,
                       const std::vector<Eigen::Vector2d>& obs, const std::vector<size_t>& idx,
                       double fx, double fy) {
  double cost = 0.0;
  for (size_t i : idx) {
    const Eigen::Vector3d q = pose.apply(pts[i]);
    if (!(q.z() > 0.0)) continue;  // behind-camera points drop out this iteration
    const double du = fx * (q.x() / q.z() - obs[i].x());
    const double dv = fy * (q.y() / q.z() - obs[i].y());
    cost += du * du + dv * dv;
  }
  return cost;
}

inline Eigen::Matrix3d skew(const Eigen::Vector3d& w) {
  Eigen::Matrix3d s;
  s << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return s;
}

inline Eigen::Matrix3d exp_so3(const Eigen::Vector3d& w) {
  const double theta = w.norm();
  if (theta < 1e-12) return Eigen::Matrix3d::Identity() + skew(w);
  const Eigen::Matrix3d k = skew(w / theta);
  return Eigen::Matrix3d::Identity() + std::sin(theta) * k + (1 - std::cos(theta)) * k * k;
}

// Gauss-Newton on the 6-parameter left-multiplied rigid update, with step
// halving to keep the cost monotonically non-increasing.
inline void pnp_refine(Pose& pose, const std::vector<Eigen::Vector3d>& pts,
                       const std::vector<Eigen::Vector2d>& obs, const std::vector<size_t>& idx,
                       double fx, double fy, int max_iterations,
                       std::vector<double>* cost_log) {
  double cost = pnp_cost(pose, pts, obs, idx, fx, fy);
  if (cost_log) cost_log->push_back(cost);
  for (int it = 0; it < max_iterations; ++it) {
    Eigen::Matrix<double, 6, 6> jtj = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> jtr = Eigen::Matrix<double, 6, 1>::Zero();
    for (size_t i : idx) {
      const Eigen::Vector3d q = pose.apply(pts[i]);
      if (!(q.z() > 0.0)) continue;
      const double iz = 1.0 / q.z();
      Eigen::Matrix<double, 2, 3> dproj;
      dproj << fx * iz, 0, -fx * q.x() * iz * iz, 0, fy * iz, -fy * q.y() * iz * iz;
      Eigen::Matrix<double, 3, 6> dq;  // d(exp(xi) q)/dxi = [I | -[q]x]
      dq.leftCols<3>() = Eigen::Matrix3d::Identity();
      dq.rightCols<3>() = -skew(q);
      const Eigen::Matrix<double, 2, 6> jac = dproj * dq;
      Eigen::Vector2d res(fx * (q.x() * iz - obs[i].x()), fy * (q.y() * iz - obs[i].y()));
      jtj += jac.transpose() * jac;
      jtr += jac.transpose() * res;
    }
    Eigen::Matrix<double, 6, 1> step = jtj.ldlt().solve(-jtr);
    if (!step.allFinite()) break;
    double alpha = 1.0;
    Pose next = pose;
    double next_cost = cost;
    for (int ls = 0; ls < 20; ++ls) {
      Pose trial;
      const Eigen::Vector3d dt = alpha * step.head<3>();
      const Eigen::Matrix3d dr = exp_so3(alpha * step.tail<3>());
      trial.rotation = dr * pose.rotation;
      trial.translation = dr * pose.translation + dt;
      const double c = pnp_cost(trial, pts, obs, idx, fx, fy);
      if (c <= cost) {
        next = trial;
        next_cost = c;
        break;
      }
      alpha *= 0.5;
    }
    if (cost_log) cost_log->push_back(next_cost);
    const double decrease = cost - next_cost;
    pose = next;
    cost = next_cost;
    if (decrease < 1e-12) break;
  }
}

}  // namespace detail

// Estimates (R_rel, t_rel) mapping view-1 camera points to view 2 by
// minimizing the summed squared reprojection error over RANSAC inliers.
// Observed pixels are undistorted up front when k != 0, so the optimization
// runs in undistorted pixel space. Deterministic given options.seed.
inline PnpResult solve_pnp(const std::vector<Eigen::Vector3d>& points3d,
                           const std::vector<Pixel>& pixels2, const Intrinsics& intr,
                           const PnpOptions& options = {}) {
  const size_t n = points3d.size();
  if (n != pixels2.size()) throw ShapeMismatch("solve_pnp: size mismatch");
  if (n < 6) throw TooFewPoints("solve_pnp: need at least 6 correspondences");
  intr.validate();

  std::vector<Eigen::Vector2d> obs(n);
  for (size_t i = 0; i < n; ++i) obs[i] = detail::normalized_obs(pixels2[i], intr);

  std::vector<size_t> all(n);
  for (size_t i = 0; i < n; ++i) all[i] = i;

  auto count_inliers = [&](const Pose& pose, std::vector<uint8_t>& mask) {
    mask.assign(n, 0);
    size_t count = 0;
    for (size_t i = 0; i < n; ++i) {
      const Eigen::Vector3d q = pose.apply(points3d[i]);
      if (!(q.z() > 0.0)) continue;
      const double du = intr.fx * (q.x() / q.z() - obs[i].x());
      const double dv = intr.fy * (q.y() / q.z() - obs[i].y());
      if (du * du + dv * dv < options.ransac_threshold * options.ransac_threshold) {
        mask[i] = 1;
        ++count;
      }
    }
    return count;
  };

  PnpResult result;
  std::vector<size_t> active = all;

  if (options.ransac_threshold > 0.0) {
    std::mt19937_64 rng(options.seed);
    std::vector<uint8_t> best_mask;
    size_t best_count = 0;
    int needed = options.max_hypotheses;
    for (int hyp = 0; hyp < needed && hyp < options.max_hypotheses; ++hyp) {
      // sample 6 distinct indices
      std::vector<size_t> sample;
      while (sample.size() < 6) {
        size_t c = rng() % n;
        bool dup = false;
        for (size_t s : sample) dup = dup || s == c;
        if (!dup) sample.push_back(c);
      }
      Pose hyp_pose;
      try {
        hyp_pose = detail::pnp_dlt(points3d, obs, sample);
      } catch (const DegenerateConfiguration&) {
        continue;
      }
      std::vector<uint8_t> mask;
      const size_t count = count_inliers(hyp_pose, mask);
      if (count > best_count) {
        best_count = count;
        best_mask = mask;
        // standard adaptive stopping at 99.9% confidence
        const double w = static_cast<double>(count) / n;
        const double p_all = std::pow(w, 6.0);
        if (p_all > 1e-12) {
          const int est = static_cast<int>(std::ceil(std::log(0.001) / std::log(1.0 - p_all)));
          needed = std::min(options.max_hypotheses, std::max(est, hyp + 1));
        }
      }
    }
    if (best_count < 6) throw NoConvergence("solve_pnp: RANSAC found no 6-inlier hypothesis");
    active.clear();
    for (size_t i = 0; i < n; ++i)
      if (best_mask[i]) active.push_back(i);
  }

  Pose pose = detail::pnp_dlt(points3d, obs, active);
  detail::pnp_refine(pose, points3d, obs, active, intr.fx, intr.fy, options.max_iterations,
                     &result.cost_history);
  if (options.ransac_threshold > 0.0) {
    // Final inlier mask under the refined pose, then refine once more on it.
    std::vector<uint8_t> mask;
    const size_t count = count_inliers(pose, mask);
    if (count >= 6) {
      active.clear();
      for (size_t i = 0; i < n; ++i)
        if (mask[i]) active.push_back(i);
      detail::pnp_refine(pose, points3d, obs, active, intr.fx, intr.fy, options.max_iterations,
                         &result.cost_history);
      count_inliers(pose, result.inliers);
    } else {
      result.inliers = mask;
    }
  } else {
    result.inliers.assign(n, 1);
  }

  result.pose = pose;
  result.iterations = static_cast<int>(result.cost_history.size());
  double sum2 = 0.0;
  size_t used = 0;
  for (size_t i = 0; i < n; ++i) {
    if (!result.inliers.empty() && !result.inliers[i]) continue;
    const Eigen::Vector3d q = pose.apply(points3d[i]);
    if (!(q.z() > 0.0)) continue;
    const double du = intr.fx * (q.x() / q.z() - obs[i].x());
    const double dv = intr.fy * (q.y() / q.z() - obs[i].y());
    sum2 += du * du + dv * dv;
    ++used;
  }
  result.reprojection_rms = used ? std::sqrt(sum2 / used) : 0.0;
  return result;
}

// ---------------------------------------------------------------------------
// Depth alignment: min over (s, b) of sum (s*d1 + b - d2)^2, closed form.

inline DepthAlignment align_depth(const std::vector<double>& d1_samples,
                                  const std::vector<double>& d2_samples) {
  if (d1_samples.size() != d2_samples.size())
    throw ShapeMismatch("align_depth: sample count mismatch");
  const size_t n = d1_samples.size();
  if (n < 2) throw DegenerateSamples("align_depth: need at least 2 samples");
  double s1 = 0, s2 = 0, s11 = 0, s12 = 0;
  for (size_t i = 0; i < n; ++i) {
    s1 += d1_samples[i];
    s2 += d2_samples[i];
    s11 += d1_samples[i] * d1_samples[i];
    s12 += d1_samples[i] * d2_samples[i];
  }
  const double mean1 = s1 / n;
  const double var1 = s11 / n - mean1 * mean1;
  if (var1 < 1e-12) throw DegenerateSamples("align_depth: d1 variance below 1e-12");
  DepthAlignment out;
  out.sample_count = n;
  out.s = (s12 - s1 * s2 / n) / (s11 - s1 * s1 / n);
  out.b = (s2 - out.s * s1) / n;
  double res2 = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double r = out.s * d1_samples[i] + out.b - d2_samples[i];
    res2 += r * r;
  }
  out.residual_rms = std::sqrt(res2 / n);
  return out;
}

inline void apply_depth_alignment(DepthMap& depth, const DepthAlignment& align) {
  for (size_t i = 0; i < depth.values.size(); ++i)
    if (depth.valid[i]) {
      const float d = static_cast<float>(align.s * depth.values[i] + align.b);
      depth.values[i] = d;
      depth.valid[i] = d > 0.f ? 1 : 0;
    }
}

// ---------------------------------------------------------------------------
// Fusion

inline PointCloud fuse_point_clouds(const std::vector<FusionView>& views, int stride = 1) {
  if (stride < 1) throw BadParams("fuse_point_clouds: stride must be >= 1");
  PointCloud cloud;
  for (const FusionView& view : views) {
    if (view.image.width != view.depth.width || view.image.height != view.depth.height)
      throw ShapeMismatch("fuse_point_clouds: image/depth size mismatch");
    const Pose cam_to_world = view.world_to_camera.inverse();
    for (int y = 0; y < view.depth.height; y += stride)
      for (int x = 0; x < view.depth.width; x += stride) {
        if (!view.depth.is_valid(x, y)) continue;
        CloudPoint pt;
        pt.source_pixel = Pixel{static_cast<double>(x), static_cast<double>(y)};
        pt.cam_depth = view.depth.depth(x, y);
        pt.position = cam_to_world.apply(back_project(pt.source_pixel, pt.cam_depth, view.intr));
        const uint8_t* c = view.image.px(x, y);
        pt.color = {c[0], c[1], c[2]};
        pt.view_id = view.view_id;
        cloud.points.push_back(pt);
      }
  }
  if (cloud.points.empty()) throw EmptyCloud();
  return cloud;
}

// scale = d'_min / f_avg: minimum camera-frame depth over the views observing
// the point, divided by the mean focal length of those views (the one-pixel
// footprint at the nearest observation).
inline std::vector<double> initial_gaussian_scales(const PointCloud& cloud,
                                                   const std::vector<FusionView>& views) {
  std::vector<double> scales(cloud.points.size(), 0.0);
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    const CloudPoint& pt = cloud.points[i];
    double dmin = std::numeric_limits<double>::infinity();
    double fsum = 0.0;
    int observing = 0;
    for (const FusionView& view : views) {
      const Eigen::Vector3d q = view.world_to_camera.apply(pt.position);
      if (!(q.z() > 0.0)) continue;
      const Pixel px = project_distorted(q, view.intr);
      if (px.u < 0 || px.v < 0 || px.u > view.intr.width - 1 || px.v > view.intr.height - 1)
        continue;
      dmin = std::min(dmin, q.z());
      fsum += 0.5 * (view.intr.fx + view.intr.fy);
      ++observing;
    }
    if (observing == 0) {
      // fall back to the recorded source observation
      dmin = pt.cam_depth;
      fsum = 0.0;
      for (const FusionView& view : views)
        if (view.view_id == pt.view_id) fsum = 0.5 * (view.intr.fx + view.intr.fy);
      observing = 1;
    }
    scales[i] = dmin / (fsum / observing);
  }
  return scales;
}

// ---------------------------------------------------------------------------
// Correspondence file I/O: one `u1 v1 u2 v2 [w]` per line.

inline std::vector<Correspondence> load_correspondences(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<Correspondence> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    Correspondence c;
    if (!(is >> c.p1.u >> c.p1.v >> c.p2.u >> c.p2.v)) throw IoError("bad correspondence line: " + line);
    is >> c.weight;
    out.push_back(c);
  }
  return out;
}

inline void save_correspondences(const std::string& path,
                                 const std::vector<Correspondence>& corrs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const Correspondence& c : corrs)
    out << detail::fmt_double(c.p1.u) << " " << detail::fmt_double(c.p1.v) << " "
        << detail::fmt_double(c.p2.u) << " " << detail::fmt_double(c.p2.v) << " "
        << detail::fmt_double(c.weight) << "\n";
}

// Point-cloud text I/O: `x y z r g b view u v depth scale` per line.

inline void save_point_cloud(const std::string& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const CloudPoint& p : cloud.points) {
    for (int k = 0; k < 3; ++k) out << detail::fmt_double(p.position[k]) << " ";
    out << static_cast<int>(p.color[0]) << " " << static_cast<int>(p.color[1]) << " "
        << static_cast<int>(p.color[2]) << " " << p.view_id << " "
        << detail::fmt_double(p.source_pixel.u) << " " << detail::fmt_double(p.source_pixel.v)
        << " " << detail::fmt_double(p.cam_depth) << " " << detail::fmt_double(p.scale) << "\n";
  }
}

inline PointCloud load_point_cloud(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  PointCloud cloud;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    CloudPoint p;
    int r, g, b;
    if (!(is >> p.position.x() >> p.position.y() >> p.position.z() >> r >> g >> b >>
          p.view_id >> p.source_pixel.u >> p.source_pixel.v >> p.cam_depth >> p.scale))
      throw IoError("bad cloud line: " + line);
    p.color = {static_cast<uint8_t>(r), static_cast<uint8_t>(g), static_cast<uint8_t>(b)};
    cloud.points.push_back(p);
  }
  return cloud;
}

}  // namespace mars
