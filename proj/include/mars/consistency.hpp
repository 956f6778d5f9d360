#pragma once

// 3D-consistency and image-quality metrics: self/cross reprojection warp
// error, PSNR, SSIM/D-SSIM, photometric and depth losses.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

#include "mars/camera.hpp"
#include "mars/image.hpp"

namespace mars {

// Grid-sampled camera-frame geometry for one frame: points_cam[j] is the
// back-projection of grid[j].
struct FrameGeometry {
  std::vector<Eigen::Vector3d> points_cam;
  std::vector<Pixel> grid;
  Intrinsics intr;
  Pose pose_world;  // world -> camera
};

struct ReprojectionStat {
  double loss = 0.0;       // mean squared pixel distance
  size_t used = 0;
  size_t behind_camera = 0;
};

struct WarpReport {
  std::vector<double> per_frame_self;
  std::vector<double> per_pair_cross;
  double l_self_avg = 0.0;
  double l_cross_avg = 0.0;
  double l_2d_reproj = 0.0;
};

inline ReprojectionStat self_reprojection_error(const FrameGeometry& g) {
  if (g.points_cam.size() != g.grid.size() || g.points_cam.empty())
    throw ShapeMismatch("self_reprojection_error: points/grid mismatch or empty");
  ReprojectionStat stat;
  double sum = 0.0;
  for (size_t j = 0; j < g.points_cam.size(); ++j) {
    if (!(g.points_cam[j].z() > 0.0)) {
      ++stat.behind_camera;
      continue;
    }
    const Pixel p = project_distorted(g.points_cam[j], g.intr);
    const double du = p.u - g.grid[j].u;
    const double dv = p.v - g.grid[j].v;
    sum += du * du + dv * dv;
    ++stat.used;
  }
  stat.loss = stat.used ? sum / static_cast<double>(stat.used) : 0.0;
  return stat;
}

// Transform frame-k camera points by M_ik (frame-k camera -> frame-i camera),
// project with frame i's intrinsics, and compare to the expected locations.
inline ReprojectionStat cross_reprojection_error(const FrameGeometry& g_k, const Pose& m_ik,
                                                 const Intrinsics& intr_i,
                                                 const std::vector<Pixel>& expected_in_i) {
  if (g_k.points_cam.size() != expected_in_i.size() || g_k.points_cam.empty())
    throw ShapeMismatch("cross_reprojection_error: points/expected mismatch or empty");
  ReprojectionStat stat;
  double sum = 0.0;
  for (size_t j = 0; j < g_k.points_cam.size(); ++j) {
    const Eigen::Vector3d q = m_ik.apply(g_k.points_cam[j]);
    if (!(q.z() > 0.0)) {
      ++stat.behind_camera;
      continue;
    }
    const Pixel p = project_distorted(q, intr_i);
    const double du = p.u - expected_in_i[j].u;
    const double dv = p.v - expected_in_i[j].v;
    sum += du * du + dv * dv;
    ++stat.used;
  }
  stat.loss = stat.used ? sum / static_cast<double>(stat.used) : 0.0;
  return stat;
}

// One cross-view evaluation unit: the source frame, the relative pose used
// for warping, the target intrinsics, and the expected landing positions.
struct CrossPair {
  size_t source_frame = 0;
  size_t target_frame = 0;
  Pose m_ik;  // source camera -> target camera
  std::vector<Pixel> expected_in_target;
};

enum class PairingPolicy { Consecutive, AllPairs };

// Consecutive (i,i+1) and (i+1,i) pairs with relative poses and expected
// locations derived from reference world poses. `reference_poses` defaults to
// the frames' own declared poses.
inline std::vector<CrossPair> make_cross_pairs(const std::vector<FrameGeometry>& frames,
                                               PairingPolicy policy = PairingPolicy::Consecutive,
                                               const std::vector<Pose>* reference_poses = nullptr) {
  std::vector<Pose> refs;
  if (reference_poses) {
    refs = *reference_poses;
  } else {
    for (const FrameGeometry& f : frames) refs.push_back(f.pose_world);
  }
  if (refs.size() != frames.size())
    throw ShapeMismatch("make_cross_pairs: reference pose count mismatch");

  auto build = [&](size_t k, size_t i) {
    CrossPair pair;
    pair.source_frame = k;
    pair.target_frame = i;
    // Warp with the frames' declared poses; expected from the references.
    pair.m_ik = frames[i].pose_world * frames[k].pose_world.inverse();
    const Pose ref_m = refs[i] * refs[k].inverse();
    for (const Eigen::Vector3d& p : frames[k].points_cam) {
      const Eigen::Vector3d q = ref_m.apply(p);
      if (q.z() > 0.0)
        pair.expected_in_target.push_back(project_distorted(q, frames[i].intr));
      else
        pair.expected_in_target.push_back(
            Pixel{std::numeric_limits<double>::quiet_NaN(), 0.0});
    }
    return pair;
  };

  std::vector<CrossPair> pairs;
  if (policy == PairingPolicy::Consecutive) {
    for (size_t i = 0; i + 1 < frames.size(); ++i) {
      pairs.push_back(build(i, i + 1));
      pairs.push_back(build(i + 1, i));
    }
  } else {
    for (size_t i = 0; i < frames.size(); ++i)
      for (size_t k = 0; k < frames.size(); ++k)
        if (i != k) pairs.push_back(build(k, i));
  }
  return pairs;
}

// L_2D = (L_self_avg + L_cross_avg) / 2. A sequence with no pairs defines
// L_cross_avg = 0.
inline WarpReport warp_error(const std::vector<FrameGeometry>& frames,
                             const std::vector<CrossPair>& pairs) {
  if (frames.empty()) throw ShapeMismatch("warp_error: empty sequence");
  WarpReport report;
  for (const FrameGeometry& f : frames)
    report.per_frame_self.push_back(self_reprojection_error(f).loss);
  for (const CrossPair& pair : pairs) {
    const FrameGeometry& g_k = frames[pair.source_frame];
    // Skip expected entries with behind-camera references (NaN u).
    std::vector<Eigen::Vector3d> pts;
    std::vector<Pixel> exp;
    for (size_t j = 0; j < g_k.points_cam.size(); ++j)
      if (std::isfinite(pair.expected_in_target[j].u)) {
        pts.push_back(g_k.points_cam[j]);
        exp.push_back(pair.expected_in_target[j]);
      }
    if (pts.empty()) {
      report.per_pair_cross.push_back(0.0);
      continue;
    }
    FrameGeometry sub;
    sub.points_cam = std::move(pts);
    sub.grid.resize(sub.points_cam.size());
    sub.intr = g_k.intr;
    report.per_pair_cross.push_back(
        cross_reprojection_error(sub, pair.m_ik, frames[pair.target_frame].intr, exp).loss);
  }
  double s = 0.0;
  for (double v : report.per_frame_self) s += v;
  report.l_self_avg = s / static_cast<double>(report.per_frame_self.size());
  if (!report.per_pair_cross.empty()) {
    double c = 0.0;
    for (double v : report.per_pair_cross) c += v;
    report.l_cross_avg = c / static_cast<double>(report.per_pair_cross.size());
  }
  report.l_2d_reproj = 0.5 * (report.l_self_avg + report.l_cross_avg);
  return report;
}

// Grid-sample a depth map into camera-frame points (stride in pixels).
inline FrameGeometry frame_geometry_from_depth(const DepthMap& depth, const Intrinsics& intr,
                                               const Pose& pose_world, int stride = 8) {
  FrameGeometry g;
  g.intr = intr;
  g.pose_world = pose_world;
  for (int y = 0; y < depth.height; y += stride)
    for (int x = 0; x < depth.width; x += stride) {
      if (!depth.is_valid(x, y)) continue;
      const Pixel px{static_cast<double>(x), static_cast<double>(y)};
      g.grid.push_back(px);
      g.points_cam.push_back(back_project(px, depth.depth(x, y), intr));
    }
  return g;
}

// ---------------------------------------------------------------------------
// Image metrics

inline double mse(const FloatImage& a, const FloatImage& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw ShapeMismatch("mse: shape mismatch");
  double sum = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.data.size());
}

// 10*log10(peak^2 / MSE); +inf for identical inputs.
inline double psnr(const FloatImage& a, const FloatImage& b, double peak = 1.0) {
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / m);
}

namespace detail {

inline std::vector<double> gaussian_kernel_1d(int window, double sigma) {
  std::vector<double> k(window);
  const int half = window / 2;
  double sum = 0.0;
  for (int i = 0; i < window; ++i) {
    k[i] = std::exp(-0.5 * (i - half) * (i - half) / (sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

}  // namespace detail

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = 1.0;
};

// Gaussian-windowed SSIM, mean over all valid window positions and channels.
inline double ssim(const FloatImage& a, const FloatImage& b, const SsimOptions& opt = {}) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw ShapeMismatch("ssim: shape mismatch");
  if (a.width < opt.window || a.height < opt.window)
    throw TooSmall("ssim: image smaller than the window");
  const std::vector<double> kern = detail::gaussian_kernel_1d(opt.window, opt.sigma);
  const double c1 = (opt.k1 * opt.peak) * (opt.k1 * opt.peak);
  const double c2 = (opt.k2 * opt.peak) * (opt.k2 * opt.peak);
  const int half = opt.window / 2;

  double total = 0.0;
  size_t count = 0;
  for (int ch = 0; ch < a.channels; ++ch) {
    for (int y = half; y < a.height - half; ++y) {
      for (int x = half; x < a.width - half; ++x) {
        double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
        for (int dy = -half; dy <= half; ++dy)
          for (int dx = -half; dx <= half; ++dx) {
            const double w = kern[dy + half] * kern[dx + half];
            const double va = a.at(x + dx, y + dy, ch);
            const double vb = b.at(x + dx, y + dy, ch);
            mu_a += w * va;
            mu_b += w * vb;
            aa += w * va * va;
            bb += w * vb * vb;
            ab += w * va * vb;
          }
        const double var_a = aa - mu_a * mu_a;
        const double var_b = bb - mu_b * mu_b;
        const double cov = ab - mu_a * mu_b;
        const double val = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                           ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        total += val;
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

inline double d_ssim(const FloatImage& a, const FloatImage& b, const SsimOptions& opt = {}) {
  return (1.0 - ssim(a, b, opt)) / 2.0;
}

// (1 - lambda) * mean|a - b| + lambda * d_ssim(a, b)
inline double photometric_loss(const FloatImage& a, const FloatImage& b, double lambda,
                               const SsimOptions& opt = {}) {
  if (lambda < 0.0 || lambda > 1.0) throw BadParams("photometric_loss: lambda outside [0,1]");
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw ShapeMismatch("photometric_loss: shape mismatch");
  double l1 = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i)
    l1 += std::abs(static_cast<double>(a.data[i]) - b.data[i]);
  l1 /= static_cast<double>(a.data.size());
  const double ds = lambda > 0.0 ? d_ssim(a, b, opt) : 0.0;
  return (1.0 - lambda) * l1 + lambda * ds;
}

struct DepthL1Result {
  double loss = 0.0;
  size_t valid_count = 0;
};

// Mean absolute depth difference over jointly valid pixels.
inline DepthL1Result depth_l1(const DepthMap& d_render, const DepthMap& d_ref) {
  if (d_render.width != d_ref.width || d_render.height != d_ref.height)
    throw ShapeMismatch("depth_l1: shape mismatch");
  DepthL1Result out;
  double sum = 0.0;
  for (size_t i = 0; i < d_render.values.size(); ++i) {
    if (!d_render.valid[i] || !d_ref.valid[i]) continue;
    sum += std::abs(static_cast<double>(d_render.values[i]) - d_ref.values[i]);
    ++out.valid_count;
  }
  if (out.valid_count == 0) throw NoOverlap();
  out.loss = sum / static_cast<double>(out.valid_count);
  return out;
}

}  // namespace mars
