#pragma once

// Procedural terrain stereo simulator: the independent ground-truth oracle.
// Images are produced by ray-casting against a value-noise heightfield, so
// the point-splat renderer under test is validated against a different
// mechanism. Everything is reproducible bit-for-bit from (seed, params).
//
// World frame: y points down (matching the camera image convention), the
// terrain is a height h(x, z) >= 0 above the base plane y = 0, and the
// surface point at (x, z) sits at y = -h(x, z).

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "mars/camera.hpp"
#include "mars/geometry.hpp"
#include "mars/image.hpp"

namespace mars {

struct TerrainParams {
  double extent = 40.0;      // heightfield span in meters, centered on the origin
  double amplitude = 1.0;    // relief amplitude in meters
  int octaves = 5;
  int resolution = 257;      // heightfield grid nodes per side
};

struct Terrain {
  TerrainParams params;
  uint64_t seed = 0;
  std::vector<double> heights;  // resolution x resolution
  std::vector<float> albedo;    // resolution x resolution x 3, in [0,1]

  double grid_height(int i, int j) const {
    return heights[static_cast<size_t>(j) * params.resolution + i];
  }

  // Bilinear height at world (x, z); coordinates clamp to the grid edge.
  double height_at(double x, double z) const {
    const int res = params.resolution;
    const double gx = std::clamp((x / params.extent + 0.5) * (res - 1), 0.0, res - 1.0);
    const double gz = std::clamp((z / params.extent + 0.5) * (res - 1), 0.0, res - 1.0);
    const int i0 = std::min(res - 2, static_cast<int>(gx));
    const int j0 = std::min(res - 2, static_cast<int>(gz));
    const double fx = gx - i0, fz = gz - j0;
    const double h00 = grid_height(i0, j0), h10 = grid_height(i0 + 1, j0);
    const double h01 = grid_height(i0, j0 + 1), h11 = grid_height(i0 + 1, j0 + 1);
    return (1 - fx) * (1 - fz) * h00 + fx * (1 - fz) * h10 + (1 - fx) * fz * h01 +
           fx * fz * h11;
  }

  Eigen::Vector3f albedo_at(double x, double z) const {
    const int res = params.resolution;
    const double gx = std::clamp((x / params.extent + 0.5) * (res - 1), 0.0, res - 1.0);
    const double gz = std::clamp((z / params.extent + 0.5) * (res - 1), 0.0, res - 1.0);
    const int i = static_cast<int>(std::lround(gx));
    const int j = static_cast<int>(std::lround(gz));
    const float* a = albedo.data() + 3 * (static_cast<size_t>(j) * res + i);
    return Eigen::Vector3f(a[0], a[1], a[2]);
  }

  // Surface normal from the analytic gradient of the bilinear height.
  Eigen::Vector3d normal_at(double x, double z) const {
    const double eps = 1e-4 * params.extent;
    const double dhdx = (height_at(x + eps, z) - height_at(x - eps, z)) / (2 * eps);
    const double dhdz = (height_at(x, z + eps) - height_at(x, z - eps)) / (2 * eps);
    // surface y = -h(x, z); upward (toward -y) normal
    return Eigen::Vector3d(-dhdx, -1.0, -dhdz).normalized();
  }
};

namespace detail {

inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline double lattice_value(uint64_t seed, uint64_t channel, int64_t xi, int64_t yi) {
  uint64_t h = mix64(seed ^ mix64(channel) ^ mix64(static_cast<uint64_t>(xi) * 0x100000001b3ull) ^
                     mix64(static_cast<uint64_t>(yi)));
  return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);  // [0, 1)
}

inline double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Multi-octave value noise in [0, 1], at lattice frequency `freq` cells over
// the unit square.
inline double value_noise(uint64_t seed, uint64_t channel, double u, double v, int octaves,
                          double base_freq = 4.0) {
  double sum = 0.0, amp = 1.0, norm = 0.0, freq = base_freq;
  for (int o = 0; o < octaves; ++o) {
    const double x = u * freq, y = v * freq;
    const int64_t xi = static_cast<int64_t>(std::floor(x));
    const int64_t yi = static_cast<int64_t>(std::floor(y));
    const double fx = smoothstep(x - xi), fy = smoothstep(y - yi);
    const double v00 = lattice_value(seed, channel * 64 + o, xi, yi);
    const double v10 = lattice_value(seed, channel * 64 + o, xi + 1, yi);
    const double v01 = lattice_value(seed, channel * 64 + o, xi, yi + 1);
    const double v11 = lattice_value(seed, channel * 64 + o, xi + 1, yi + 1);
    sum += amp * ((1 - fx) * (1 - fy) * v00 + fx * (1 - fy) * v10 + (1 - fx) * fy * v01 +
                  fx * fy * v11);
    norm += amp;
    amp *= 0.5;
    freq *= 2.0;
  }
  return sum / norm;
}

}  // namespace detail

inline Terrain generate_terrain(uint64_t seed, const TerrainParams& params = {}) {
  if (params.resolution < 2 || !(params.extent > 0.0) || params.octaves < 1 ||
      params.amplitude < 0.0)
    throw BadParams("generate_terrain: positive params required");
  Terrain terrain;
  terrain.params = params;
  terrain.seed = seed;
  const int res = params.resolution;
  terrain.heights.resize(static_cast<size_t>(res) * res);
  terrain.albedo.resize(static_cast<size_t>(res) * res * 3);
  for (int j = 0; j < res; ++j) {
    for (int i = 0; i < res; ++i) {
      const double u = static_cast<double>(i) / (res - 1);
      const double v = static_cast<double>(j) / (res - 1);
      terrain.heights[static_cast<size_t>(j) * res + i] =
          params.amplitude * detail::value_noise(seed, 0, u, v, params.octaves);
      // Mars-ish palette driven by two independent noise channels.
      const double tex = detail::value_noise(seed, 1, u, v, params.octaves, 16.0);
      const double tint = detail::value_noise(seed, 2, u, v, 3, 6.0);
      float* a = terrain.albedo.data() + 3 * (static_cast<size_t>(j) * res + i);
      a[0] = static_cast<float>(0.45 + 0.35 * tex + 0.10 * tint);
      a[1] = static_cast<float>(0.25 + 0.25 * tex + 0.05 * tint);
      a[2] = static_cast<float>(0.15 + 0.18 * tex);
    }
  }
  return terrain;
}

struct StereoRig {
  Intrinsics intr;
  Pose camera_to_world;  // left camera
  double baseline = 0.3; // right camera offset along camera +x, meters
};

struct StereoCapture {
  Image left, right;
  DepthMap depth_left, depth_right;
  Pose pose_left, pose_right;  // world -> camera
  Intrinsics intr;
  double baseline = 0.0;
  std::vector<Correspondence> correspondences;
  std::vector<std::pair<double, double>> correspondence_depths;  // (d1, d2)
};

namespace detail {

// March then bisect the ray against the heightfield. Returns the hit
// parameter t, or a negative value when the ray never crosses the surface.
inline double raycast_terrain(const Terrain& terrain, const Eigen::Vector3d& origin,
                              const Eigen::Vector3d& dir, double t_max) {
  const double dt = terrain.params.extent / 1024.0;
  auto above = [&](double t) {
    const Eigen::Vector3d p = origin + t * dir;
    return p.y() + terrain.height_at(p.x(), p.z());  // < 0 above the surface
  };
  // A non-descending ray starting above the tallest possible surface point
  // can never hit; skip the march for sky rays.
  if (dir.y() <= 0.0 && origin.y() < -terrain.params.amplitude) return -1.0;
  double t0 = 1e-6;
  double f0 = above(t0);
  if (f0 >= 0.0) return -1.0;  // starts at or below the surface
  for (double t = t0 + dt; t <= t_max; t += dt) {
    const double f = above(t);
    if (f >= 0.0) {
      // bisect [t0, t]
      double lo = t0, hi = t;
      for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (above(mid) < 0.0)
          lo = mid;
        else
          hi = mid;
      }
      return 0.5 * (lo + hi);
    }
    t0 = t;
    f0 = f;
  }
  return -1.0;
}

inline Eigen::Vector3f shade(const Terrain& terrain, const Eigen::Vector3d& p) {
  static const Eigen::Vector3d sun = Eigen::Vector3d(0.35, -1.0, 0.25).normalized();
  const double lambert =
      std::max(0.0, terrain.normal_at(p.x(), p.z()).dot(-sun));
  const float light = static_cast<float>(0.25 + 0.75 * lambert);
  return terrain.albedo_at(p.x(), p.z()) * light;
}

}  // namespace detail

// Ray-cast both views of a stereo rig. Depth maps are exact heightfield
// intersections; correspondences are co-visible hits from the left view
// projected into both images, exact by construction.
inline StereoCapture simulate_stereo_capture(const Terrain& terrain, const StereoRig& rig,
                                             int correspondence_stride = 8) {
  rig.intr.validate();
  StereoCapture cap;
  cap.intr = rig.intr;
  cap.baseline = rig.baseline;
  cap.pose_left = rig.camera_to_world.inverse();
  Pose right_c2w = rig.camera_to_world;
  right_c2w.translation += rig.baseline * rig.camera_to_world.rotation.col(0);
  cap.pose_right = right_c2w.inverse();

  const double t_max = 40.0 * terrain.params.extent;
  auto render_view = [&](const Pose& world_to_cam, Image& img, DepthMap& depth) {
    const Pose cam_to_world = world_to_cam.inverse();
    img = Image(rig.intr.width, rig.intr.height, 0);
    depth = DepthMap(rig.intr.width, rig.intr.height);
    size_t hits = 0;
    for (int y = 0; y < rig.intr.height; ++y)
      for (int x = 0; x < rig.intr.width; ++x) {
        const Eigen::Vector3d dir_cam =
            back_project(Pixel{static_cast<double>(x), static_cast<double>(y)}, 1.0, rig.intr)
                .normalized();
        const Eigen::Vector3d dir = cam_to_world.rotation * dir_cam;
        const double t =
            detail::raycast_terrain(terrain, cam_to_world.translation, dir, t_max);
        if (t <= 0.0) continue;
        const Eigen::Vector3d p = cam_to_world.translation + t * dir;
        depth.set(x, y, static_cast<float>((world_to_cam.apply(p)).z()));
        const Eigen::Vector3f c = detail::shade(terrain, p);
        uint8_t* px = img.px(x, y);
        for (int ch = 0; ch < 3; ++ch)
          px[ch] = static_cast<uint8_t>(std::clamp(std::lround(c[ch] * 255.0), 0l, 255l));
        ++hits;
      }
    return hits;
  };

  const size_t hits_left = render_view(cap.pose_left, cap.left, cap.depth_left);
  render_view(cap.pose_right, cap.right, cap.depth_right);
  if (hits_left == 0) throw NoVisibleTerrain();

  // Correspondences from co-visible left-view hits.
  const Pose left_c2w = cap.pose_left.inverse();
  for (int y = 0; y < rig.intr.height; y += correspondence_stride)
    for (int x = 0; x < rig.intr.width; x += correspondence_stride) {
      if (!cap.depth_left.is_valid(x, y)) continue;
      const Pixel p1{static_cast<double>(x), static_cast<double>(y)};
      const double d1 = cap.depth_left.depth(x, y);
      const Eigen::Vector3d p_world = left_c2w.apply(back_project(p1, d1, rig.intr));
      const Eigen::Vector3d q = cap.pose_right.apply(p_world);
      if (!(q.z() > 0.0)) continue;
      const Pixel p2 = project(q, rig.intr);
      if (p2.u < 1 || p2.v < 1 || p2.u > rig.intr.width - 2 || p2.v > rig.intr.height - 2)
        continue;
      // Occlusion test: cast the exact right-view ray and require it to hit
      // the same surface point.
      const Pose right_c2w2 = cap.pose_right.inverse();
      const Eigen::Vector3d dir =
          right_c2w2.rotation * back_project(p2, 1.0, rig.intr).normalized();
      const double t = detail::raycast_terrain(terrain, right_c2w2.translation, dir, t_max);
      if (t <= 0.0) continue;
      const Eigen::Vector3d hit = right_c2w2.translation + t * dir;
      if ((hit - p_world).norm() > 1e-3 * q.z()) continue;
      cap.correspondences.push_back({p1, p2, 1.0});
      cap.correspondence_depths.emplace_back(d1, q.z());
    }
  return cap;
}

// Ground-truth relative pose mapping left-camera coordinates to right-camera
// coordinates.
inline Pose relative_pose(const StereoCapture& cap) {
  return cap.pose_right * cap.pose_left.inverse();
}

// ---------------------------------------------------------------------------
// Deterministic perturbations, each returning the applied parameters so tests
// can assert recovery.

struct PerturbRecord {
  std::string kind;
  double scale = 1.0, bias = 0.0;   // depth affine
  double sigma = 0.0;               // blur
  double rotation_rad = 0.0, translation_m = 0.0;  // pose noise magnitudes
  std::vector<size_t> outlier_indices;
};

inline std::pair<Image, PerturbRecord> perturb_blur(const Image& img, double sigma) {
  PerturbRecord rec;
  rec.kind = "blur";
  rec.sigma = sigma;
  return {gaussian_blur(img, sigma), rec};
}

inline std::pair<Image, PerturbRecord> perturb_grayscale(const Image& img) {
  PerturbRecord rec;
  rec.kind = "grayscale";
  Image out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const uint8_t* p = img.px(x, y);
      const uint8_t l = static_cast<uint8_t>(std::lround(luminance(p[0], p[1], p[2])));
      uint8_t* q = out.px(x, y);
      q[0] = q[1] = q[2] = l;
    }
  return {out, rec};
}

inline std::pair<Image, PerturbRecord> perturb_constant(const Image& img, uint8_t value = 128) {
  PerturbRecord rec;
  rec.kind = "constant";
  Image out(img.width, img.height, value);
  return {out, rec};
}

inline std::pair<DepthMap, PerturbRecord> perturb_depth_affine(const DepthMap& depth, double s,
                                                               double b) {
  PerturbRecord rec;
  rec.kind = "depth_affine";
  rec.scale = s;
  rec.bias = b;
  DepthMap out = depth;
  for (size_t i = 0; i < out.values.size(); ++i)
    if (out.valid[i]) {
      const float d = static_cast<float>(s * out.values[i] + b);
      out.values[i] = d;
      out.valid[i] = d > 0.f ? 1 : 0;
    }
  return {out, rec};
}

inline std::pair<Pose, PerturbRecord> perturb_pose(const Pose& pose, double rotation_rad,
                                                   double translation_m, uint64_t seed) {
  PerturbRecord rec;
  rec.kind = "pose_noise";
  rec.rotation_rad = rotation_rad;
  rec.translation_m = translation_m;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::Vector3d axis(gauss(rng), gauss(rng), gauss(rng));
  axis.normalize();
  Eigen::Vector3d dt(gauss(rng), gauss(rng), gauss(rng));
  if (dt.norm() > 0) dt = dt.normalized() * translation_m;
  Pose out = pose;
  out.rotation = Eigen::AngleAxisd(rotation_rad, axis).toRotationMatrix() * pose.rotation;
  out.translation = pose.translation + dt;
  return {out, rec};
}

// Replace a deterministic fraction of p2 observations with uniform noise.
inline std::pair<std::vector<Correspondence>, PerturbRecord> perturb_outliers(
    const std::vector<Correspondence>& corrs, double fraction, int width, int height,
    uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) throw BadSpec("perturb_outliers: fraction outside [0,1]");
  PerturbRecord rec;
  rec.kind = "outliers";
  std::vector<Correspondence> out = corrs;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(0.0, width - 1.0);
  std::uniform_real_distribution<double> uy(0.0, height - 1.0);
  const size_t count = static_cast<size_t>(std::lround(fraction * corrs.size()));
  // choose indices by a seeded shuffle of 0..n-1
  std::vector<size_t> order(corrs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  for (size_t i = 0; i < count; ++i) {
    const size_t idx = order[i];
    out[idx].p2 = Pixel{ux(rng), uy(rng)};
    rec.outlier_indices.push_back(idx);
  }
  std::sort(rec.outlier_indices.begin(), rec.outlier_indices.end());
  return {out, rec};
}

}  // namespace mars
