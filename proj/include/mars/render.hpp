#pragma once

// Deterministic z-buffer point-splat renderer and bilateral-grid appearance
// harmonization. Frames render independently; within a frame the z-buffer is
// filled per row-tile with the point loop inside, so the result is identical
// to the sequential reference for any worker count.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "mars/camera.hpp"
#include "mars/geometry.hpp"
#include "mars/image.hpp"
#include "mars/trajectory.hpp"

namespace mars {

struct Frame {
  Image rgb;
  DepthMap depth;  // depth.valid doubles as the coverage mask
  Pose pose;       // world -> camera
  int index = 0;
};

struct RenderOptions {
  double splat_radius = -1.0;  // px; < 0 selects the per-point footprint scale*f/z
  int workers = 1;
};

namespace detail {

struct SplatEntry {
  float depth = std::numeric_limits<float>::infinity();
  int64_t point_index = -1;
  bool covered() const { return point_index >= 0; }
  // Tie-break by (depth, index) so the result is permutation independent.
  bool beats(float d, int64_t idx) const {
    return d < depth || (d == depth && idx < point_index);
  }
};

struct ProjectedSplat {
  double u, v, z;
  int radius_px;
  int64_t index;
};

}  // namespace detail

inline Frame render_view(const PointCloud& cloud, const Pose& world_to_camera,
                         const Intrinsics& intr, const RenderOptions& options = {}) {
  if (cloud.points.empty()) throw EmptyCloud("render_view: empty cloud");
  const int w = intr.width, h = intr.height;
  Frame frame;
  frame.rgb = Image(w, h, 0);
  frame.depth = DepthMap(w, h);
  frame.pose = world_to_camera;

  // Project every point once.
  std::vector<detail::ProjectedSplat> splats;
  splats.reserve(cloud.points.size());
  const double favg = 0.5 * (intr.fx + intr.fy);
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    const CloudPoint& pt = cloud.points[i];
    const Eigen::Vector3d q = world_to_camera.apply(pt.position);
    if (!(q.z() > 0.0)) continue;
    const Pixel px = project_distorted(q, intr);
    double radius = options.splat_radius;
    if (radius < 0.0)
      radius = pt.scale > 0.0 ? std::max(1.0, pt.scale * favg / q.z()) : 1.0;
    if (px.u < -radius || px.v < -radius || px.u > w - 1 + radius || px.v > h - 1 + radius)
      continue;
    splats.push_back({px.u, px.v, q.z(), static_cast<int>(std::floor(radius)),
                      static_cast<int64_t>(i)});
  }

  std::vector<detail::SplatEntry> zbuf(static_cast<size_t>(w) * h);
  auto fill_rows = [&](int y0, int y1) {
    for (const detail::ProjectedSplat& s : splats) {
      const int cy = static_cast<int>(std::lround(s.v));
      const int cx = static_cast<int>(std::lround(s.u));
      const int lo = std::max(y0, cy - s.radius_px);
      const int hi = std::min(y1 - 1, cy + s.radius_px);
      for (int y = lo; y <= hi; ++y) {
        const int dy = y - cy;
        const int span = static_cast<int>(std::floor(
            std::sqrt(std::max(0.0, static_cast<double>(s.radius_px) * s.radius_px - dy * dy))));
        for (int x = std::max(0, cx - span); x <= std::min(w - 1, cx + span); ++x) {
          detail::SplatEntry& e = zbuf[static_cast<size_t>(y) * w + x];
          if (e.beats(static_cast<float>(s.z), s.index)) {
            e.depth = static_cast<float>(s.z);
            e.point_index = s.index;
          }
        }
      }
    }
  };

  const int workers = std::max(1, options.workers);
  if (workers == 1) {
    fill_rows(0, h);
  } else {
    std::vector<std::thread> pool;
    const int rows_per = (h + workers - 1) / workers;
    for (int t = 0; t < workers; ++t) {
      const int y0 = t * rows_per;
      const int y1 = std::min(h, y0 + rows_per);
      if (y0 < y1) pool.emplace_back(fill_rows, y0, y1);
    }
    for (std::thread& th : pool) th.join();
  }

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const detail::SplatEntry& e = zbuf[static_cast<size_t>(y) * w + x];
      if (!e.covered()) continue;
      frame.depth.set(x, y, e.depth);
      const auto& color = cloud.points[static_cast<size_t>(e.point_index)].color;
      uint8_t* p = frame.rgb.px(x, y);
      p[0] = color[0];
      p[1] = color[1];
      p[2] = color[2];
    }
  return frame;
}

// Per-pixel camera-frame normals from central-difference tangents of the
// back-projected depth. Unit length, z component pointing toward the camera
// (negative z). Pixels without valid neighbors get a zero normal.
inline FloatImage normal_from_depth(const DepthMap& depth, const Intrinsics& intr) {
  FloatImage normals(depth.width, depth.height, 3, 0.f);
  for (int y = 1; y < depth.height - 1; ++y)
    for (int x = 1; x < depth.width - 1; ++x) {
      if (!depth.is_valid(x - 1, y) || !depth.is_valid(x + 1, y) || !depth.is_valid(x, y - 1) ||
          !depth.is_valid(x, y + 1))
        continue;
      const auto bp = [&](int px, int py) {
        return back_project(Pixel{static_cast<double>(px), static_cast<double>(py)},
                            depth.depth(px, py), intr);
      };
      const Eigen::Vector3d tu = bp(x + 1, y) - bp(x - 1, y);
      const Eigen::Vector3d tv = bp(x, y + 1) - bp(x, y - 1);
      Eigen::Vector3d n = tu.cross(tv);
      const double len = n.norm();
      if (!(len > 0.0)) continue;
      n /= len;
      if (n.z() > 0) n = -n;
      normals.at(x, y, 0) = static_cast<float>(n.x());
      normals.at(x, y, 1) = static_cast<float>(n.y());
      normals.at(x, y, 2) = static_cast<float>(n.z());
    }
  return normals;
}

inline std::vector<Frame> render_sequence(const PointCloud& cloud, const Trajectory& traj,
                                          const Intrinsics& intr,
                                          const RenderOptions& options = {}) {
  std::vector<Frame> frames;
  frames.reserve(traj.poses.size());
  for (size_t i = 0; i < traj.poses.size(); ++i) {
    Frame f = render_view(cloud, traj.poses[i].inverse(), intr, options);
    f.index = static_cast<int>(i);
    frames.push_back(std::move(f));
  }
  return frames;
}

// Standard per-sequence layout: frames/%05d.png, depth/%05d.pfm,
// normals/%05d.pfm, poses.txt (world->camera), caption.txt.
inline void write_sequence(const std::string& dir, const std::vector<Frame>& frames,
                           const Intrinsics& intr, const std::string& caption) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "frames");
  fs::create_directories(fs::path(dir) / "depth");
  fs::create_directories(fs::path(dir) / "normals");
  std::vector<Pose> poses;
  char name[32];
  for (const Frame& f : frames) {
    std::snprintf(name, sizeof(name), "%05d.png", f.index);
    write_png((fs::path(dir) / "frames" / name).string(), f.rgb);
    std::snprintf(name, sizeof(name), "%05d.pfm", f.index);
    write_depth_pfm((fs::path(dir) / "depth" / name).string(), f.depth);
    write_pfm((fs::path(dir) / "normals" / name).string(), normal_from_depth(f.depth, intr));
    poses.push_back(f.pose);
  }
  save_poses((fs::path(dir) / "poses.txt").string(), poses);
  std::ofstream cap((fs::path(dir) / "caption.txt").string());
  cap << caption << "\n";
  save_intrinsics((fs::path(dir) / "intrinsics.txt").string(), intr);
}

// ---------------------------------------------------------------------------
// Bilateral grid: per-cell 3x4 affine color transforms over a coarse
// (spatial x, spatial y, luminance) grid, sliced by trilinear interpolation.

struct BilateralGrid {
  int gw = 16, gh = 16, gd = 8;
  std::vector<double> coeffs;  // gw*gh*gd cells * 12, row-major 3x4 per cell

  BilateralGrid() = default;
  BilateralGrid(int w, int h, int d) : gw(w), gh(h), gd(d), coeffs(cells() * 12ull, 0.0) {
    for (size_t c = 0; c < cells(); ++c) set_identity(c);
  }
  size_t cells() const { return static_cast<size_t>(gw) * gh * gd; }
  size_t cell_index(int i, int j, int k) const {
    return (static_cast<size_t>(k) * gh + j) * gw + i;
  }
  void set_identity(size_t cell) {
    double* a = coeffs.data() + 12 * cell;
    for (int i = 0; i < 12; ++i) a[i] = 0.0;
    a[0] = a[5] = a[10] = 1.0;  // rows [1 0 0 0; 0 1 0 0; 0 0 1 0]
  }
};

namespace detail {

struct GridTap {
  size_t cell;
  double weight;
};

// Trilinear footprint of a pixel at normalized position (x01, y01) with
// guidance value g01 in [0,1]. Align-corners mapping.
inline int grid_taps(const BilateralGrid& grid, double x01, double y01, double g01,
                     GridTap taps[8]) {
  const double gx = x01 * (grid.gw - 1);
  const double gy = y01 * (grid.gh - 1);
  const double gz = std::clamp(g01, 0.0, 1.0) * (grid.gd - 1);
  const int x0 = std::min(grid.gw - 2, std::max(0, static_cast<int>(gx)));
  const int y0 = std::min(grid.gh - 2, std::max(0, static_cast<int>(gy)));
  const int z0 = std::min(grid.gd - 2, std::max(0, static_cast<int>(gz)));
  const double fx = gx - x0, fy = gy - y0, fz = gz - z0;
  int n = 0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
        taps[n++] = {grid.cell_index(x0 + dx, y0 + dy, z0 + dz), w};
      }
  return n;
}

inline double lerp(double a, double b, double f) { return a + f * (b - a); }

}  // namespace detail

// Interpolate the 12 affine coefficients at a pixel. Uses nested lerps so
// that a spatially constant grid reproduces its cell values exactly.
inline void slice_bilateral_grid(const BilateralGrid& grid, double x01, double y01, double g01,
                                 double out[12]) {
  const double gx = x01 * (grid.gw - 1);
  const double gy = y01 * (grid.gh - 1);
  const double gz = std::clamp(g01, 0.0, 1.0) * (grid.gd - 1);
  const int x0 = std::min(grid.gw - 2, std::max(0, static_cast<int>(gx)));
  const int y0 = std::min(grid.gh - 2, std::max(0, static_cast<int>(gy)));
  const int z0 = std::min(grid.gd - 2, std::max(0, static_cast<int>(gz)));
  const double fx = gx - x0, fy = gy - y0, fz = gz - z0;
  for (int c = 0; c < 12; ++c) {
    auto at = [&](int dx, int dy, int dz) {
      return grid.coeffs[12 * grid.cell_index(x0 + dx, y0 + dy, z0 + dz) + c];
    };
    const double c00 = detail::lerp(at(0, 0, 0), at(1, 0, 0), fx);
    const double c10 = detail::lerp(at(0, 1, 0), at(1, 1, 0), fx);
    const double c01 = detail::lerp(at(0, 0, 1), at(1, 0, 1), fx);
    const double c11 = detail::lerp(at(0, 1, 1), at(1, 1, 1), fx);
    out[c] = detail::lerp(detail::lerp(c00, c10, fy), detail::lerp(c01, c11, fy), fz);
  }
}

struct BilateralFitOptions {
  int gw = 16, gh = 16, gd = 8;
  double tv_weight = 1e-3;
  double ridge = 1e-6;  // pulls unconstrained cells toward the identity affine
};

// Fit the grid so that slice(A, pixel) * [r g b 1]^T matches the target, by
// linear least squares (the objective is quadratic in the coefficients).
// Guidance intensity is the source luminance (Rec. 601). Source and target
// are 3-channel float images in [0,1].
inline BilateralGrid fit_bilateral_grid(const FloatImage& source, const FloatImage& target,
                                        const BilateralFitOptions& options = {}) {
  if (source.width != target.width || source.height != target.height || source.channels != 3 ||
      target.channels != 3)
    throw ShapeMismatch("fit_bilateral_grid: source/target must be equal-size 3-channel");
  BilateralGrid grid(options.gw, options.gh, options.gd);
  const size_t cells = grid.cells();
  const size_t unknowns = cells * 4;  // one affine row per output channel

  // Normal equations A^T A shared by the three channels; rhs differs.
  std::vector<Eigen::Triplet<double>> triplets;
  Eigen::SparseMatrix<double> ata(static_cast<int>(unknowns), static_cast<int>(unknowns));
  std::vector<Eigen::VectorXd> rhs(3, Eigen::VectorXd::Zero(unknowns));

  // Accumulate the data term into a hash map keyed by (row, col).
  std::unordered_map<uint64_t, double> acc;
  acc.reserve(cells * 64);
  detail::GridTap taps[8];
  for (int y = 0; y < source.height; ++y) {
    const double y01 = source.height > 1 ? static_cast<double>(y) / (source.height - 1) : 0.0;
    for (int x = 0; x < source.width; ++x) {
      const double x01 = source.width > 1 ? static_cast<double>(x) / (source.width - 1) : 0.0;
      const double r = source.at(x, y, 0), g = source.at(x, y, 1), b = source.at(x, y, 2);
      const double lum = 0.299 * r + 0.587 * g + 0.114 * b;
      detail::grid_taps(grid, x01, y01, lum, taps);
      const double basis[4] = {r, g, b, 1.0};
      // 32 active unknowns per pixel: 8 cells x 4 basis entries
      size_t cols[32];
      double vals[32];
      int n = 0;
      for (int t = 0; t < 8; ++t)
        for (int k = 0; k < 4; ++k) {
          cols[n] = taps[t].cell * 4 + k;
          vals[n] = taps[t].weight * basis[k];
          ++n;
        }
      for (int a = 0; a < n; ++a) {
        for (int c2 = 0; c2 < n; ++c2)
          acc[(static_cast<uint64_t>(cols[a]) << 32) | cols[c2]] += vals[a] * vals[c2];
        for (int ch = 0; ch < 3; ++ch)
          rhs[ch][cols[a]] += vals[a] * target.at(x, y, ch);
      }
    }
  }

  // Squared-difference smoothness between adjacent cells, plus a small ridge
  // toward the identity affine.
  auto add = [&](size_t row, size_t col, double v) {
    acc[(static_cast<uint64_t>(row) << 32) | col] += v;
  };
  for (int k = 0; k < grid.gd; ++k)
    for (int j = 0; j < grid.gh; ++j)
      for (int i = 0; i < grid.gw; ++i) {
        const size_t c0 = grid.cell_index(i, j, k);
        const size_t neighbors[3] = {
            i + 1 < grid.gw ? grid.cell_index(i + 1, j, k) : SIZE_MAX,
            j + 1 < grid.gh ? grid.cell_index(i, j + 1, k) : SIZE_MAX,
            k + 1 < grid.gd ? grid.cell_index(i, j, k + 1) : SIZE_MAX,
        };
        for (size_t c1 : neighbors) {
          if (c1 == SIZE_MAX) continue;
          for (int kk = 0; kk < 4; ++kk) {
            add(c0 * 4 + kk, c0 * 4 + kk, options.tv_weight);
            add(c1 * 4 + kk, c1 * 4 + kk, options.tv_weight);
            add(c0 * 4 + kk, c1 * 4 + kk, -options.tv_weight);
            add(c1 * 4 + kk, c0 * 4 + kk, -options.tv_weight);
          }
        }
        for (int kk = 0; kk < 4; ++kk) add(c0 * 4 + kk, c0 * 4 + kk, options.ridge);
      }

  triplets.reserve(acc.size());
  for (const auto& [key, v] : acc)
    triplets.emplace_back(static_cast<int>(key >> 32), static_cast<int>(key & 0xffffffffu), v);
  ata.setFromTriplets(triplets.begin(), triplets.end());

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(ata);
  if (solver.info() != Eigen::Success)
    throw SingularSystem(
        "fit_bilateral_grid: normal equations are singular (raise tv_weight or ridge)");

  for (int ch = 0; ch < 3; ++ch) {
    // Ridge target: the identity affine row for this channel.
    Eigen::VectorXd b = rhs[ch];
    for (size_t c = 0; c < cells; ++c) b[c * 4 + ch] += options.ridge;
    const Eigen::VectorXd sol = solver.solve(b);
    if (solver.info() != Eigen::Success)
      throw SingularSystem("fit_bilateral_grid: solve failed");
    for (size_t c = 0; c < cells; ++c)
      for (int k = 0; k < 4; ++k) grid.coeffs[12 * c + 4 * ch + k] = sol[c * 4 + k];
  }
  return grid;
}

// Per pixel: slice the affine at (x/W, y/H, luminance) and apply it to
// [r g b 1]. Output is not clipped; callers convert to u8 as needed.
inline FloatImage apply_bilateral_grid(const BilateralGrid& grid, const FloatImage& image) {
  if (image.channels != 3) throw NotThreeChannel("apply_bilateral_grid: need 3 channels");
  FloatImage out(image.width, image.height, 3);
  double affine[12];
  for (int y = 0; y < image.height; ++y) {
    const double y01 = image.height > 1 ? static_cast<double>(y) / (image.height - 1) : 0.0;
    for (int x = 0; x < image.width; ++x) {
      const double x01 = image.width > 1 ? static_cast<double>(x) / (image.width - 1) : 0.0;
      const double r = image.at(x, y, 0), g = image.at(x, y, 1), b = image.at(x, y, 2);
      const double lum = 0.299 * r + 0.587 * g + 0.114 * b;
      slice_bilateral_grid(grid, x01, y01, lum, affine);
      for (int ch = 0; ch < 3; ++ch) {
        const double* row = affine + 4 * ch;
        out.at(x, y, ch) = static_cast<float>(row[0] * r + row[1] * g + row[2] * b + row[3]);
      }
    }
  }
  return out;
}

}  // namespace mars
