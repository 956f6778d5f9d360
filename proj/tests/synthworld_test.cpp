#include "mars/synthworld.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "mars/errors.hpp"
#include "mars/geometry.hpp"
#include "test_support.hpp"

namespace mars {
namespace {

using testsupport::default_rig;
using testsupport::small_capture;

TEST(Terrain, DeterministicAndBounded) {
  const Terrain a = generate_terrain(3);
  const Terrain b = generate_terrain(3);
  EXPECT_EQ(a.heights, b.heights);
  EXPECT_EQ(a.albedo, b.albedo);
  const Terrain c = generate_terrain(4);
  EXPECT_NE(a.heights, c.heights);
  for (double h : a.heights) {
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, a.params.amplitude);
  }
  for (float v : a.albedo) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Terrain, HeightInterpolationMatchesGridNodes) {
  const Terrain t = generate_terrain(5);
  const int res = t.params.resolution;
  // World coordinates of grid node (i, j); bilinear sampling there must
  // return the stored value exactly.
  for (int j : {0, res / 3, res - 1})
    for (int i : {0, res / 2, res - 1}) {
      const double x = (static_cast<double>(i) / (res - 1) - 0.5) * t.params.extent;
      const double z = (static_cast<double>(j) / (res - 1) - 0.5) * t.params.extent;
      EXPECT_NEAR(t.height_at(x, z), t.grid_height(i, j), 1e-12);
    }
  // Midpoint between two nodes is their average along that edge.
  const double x0 = (0.0 / (res - 1) - 0.5) * t.params.extent;
  const double x1 = (1.0 / (res - 1) - 0.5) * t.params.extent;
  const double z0 = -0.5 * t.params.extent;
  EXPECT_NEAR(t.height_at(0.5 * (x0 + x1), z0),
              0.5 * (t.grid_height(0, 0) + t.grid_height(1, 0)), 1e-12);
  // Far outside the span the height clamps to the border value.
  EXPECT_NEAR(t.height_at(1e6, 1e6), t.grid_height(res - 1, res - 1), 1e-12);
}

TEST(Terrain, RejectsBadParams) {
  TerrainParams p;
  p.resolution = 1;
  EXPECT_THROW(generate_terrain(0, p), BadParams);
  p = TerrainParams{};
  p.extent = 0.0;
  EXPECT_THROW(generate_terrain(0, p), BadParams);
  p = TerrainParams{};
  p.amplitude = -1.0;
  EXPECT_THROW(generate_terrain(0, p), BadParams);
}

// Independent raycast oracle: for a flat terrain (amplitude 0) the hit is a
// ray-plane intersection with a closed form.
TEST(Raycast, FlatTerrainClosedForm) {
  TerrainParams p;
  p.amplitude = 0.0;
  const Terrain flat = generate_terrain(1, p);
  const Eigen::Vector3d origin(0.0, -5.0, 0.0);  // 5 m above the y=0 surface
  const Eigen::Vector3d dir = Eigen::Vector3d(0.2, 1.0, 0.1).normalized();
  const double t = detail::raycast_terrain(flat, origin, dir, 1000.0);
  ASSERT_GT(t, 0.0);
  EXPECT_NEAR(t, 5.0 / dir.y(), 1e-9);
  // A ray parallel to the surface from above never hits.
  EXPECT_LT(detail::raycast_terrain(flat, origin, Eigen::Vector3d(1, 0, 0), 1000.0), 0.0);
  // An ascending ray (toward -y) from above never hits.
  EXPECT_LT(detail::raycast_terrain(flat, origin, Eigen::Vector3d(0, -1, 0), 1000.0), 0.0);
}

// On bumpy terrain the returned parameter must put the point on the surface.
TEST(Raycast, HitPointLiesOnSurface) {
  const Terrain t = generate_terrain(9);
  const Eigen::Vector3d origin(1.0, -6.0, -2.0);
  for (double ang : {0.3, 0.6, 0.9, 1.2}) {
    const Eigen::Vector3d dir(std::cos(ang) * 0.3, std::sin(ang), 0.2);
    const double hit = detail::raycast_terrain(t, origin, dir.normalized(), 1000.0);
    ASSERT_GT(hit, 0.0) << "angle " << ang;
    const Eigen::Vector3d p = origin + hit * dir.normalized();
    EXPECT_NEAR(p.y(), -t.height_at(p.x(), p.z()), 1e-6);
  }
}

TEST(Capture, DepthMapsMatchRaycastOracle) {
  const StereoCapture& cap = small_capture();
  EXPECT_EQ(cap.left.width, 96);
  EXPECT_EQ(cap.depth_left.width, 96);
  size_t valid = 0;
  for (uint8_t v : cap.depth_left.valid) valid += v;
  EXPECT_GT(valid, 0.9 * cap.depth_left.values.size());

  // Spot-check: back-projected depth pixels lie on the terrain surface.
  const Terrain terrain = generate_terrain(7);
  const Pose c2w = cap.pose_left.inverse();
  for (int y = 8; y < 96; y += 24)
    for (int x = 8; x < 96; x += 24) {
      if (!cap.depth_left.is_valid(x, y)) continue;
      const Eigen::Vector3d pw = c2w.apply(back_project(
          Pixel{static_cast<double>(x), static_cast<double>(y)},
          cap.depth_left.depth(x, y), cap.intr));
      EXPECT_NEAR(pw.y(), -terrain.height_at(pw.x(), pw.z()), 1e-3);
    }
}

TEST(Capture, RelativePoseIsPureBaselineTranslation) {
  const StereoCapture& cap = small_capture();
  const Pose rel = relative_pose(cap);
  EXPECT_LT((rel.rotation - Eigen::Matrix3d::Identity()).norm(), 1e-12);
  // Left-camera origin maps to (-baseline, 0, 0) in the right camera.
  EXPECT_NEAR(rel.translation.x(), -cap.baseline, 1e-12);
  EXPECT_NEAR(rel.translation.y(), 0.0, 1e-12);
  EXPECT_NEAR(rel.translation.z(), 0.0, 1e-12);
}

TEST(Capture, CorrespondencesAreExact) {
  const StereoCapture& cap = small_capture();
  ASSERT_GT(cap.correspondences.size(), 20u);
  ASSERT_EQ(cap.correspondences.size(), cap.correspondence_depths.size());
  const Pose rel = relative_pose(cap);
  for (size_t i = 0; i < cap.correspondences.size(); ++i) {
    const Correspondence& c = cap.correspondences[i];
    const auto& [d1, d2] = cap.correspondence_depths[i];
    const Eigen::Vector3d q = rel.apply(back_project(c.p1, d1, cap.intr));
    EXPECT_NEAR(q.z(), d2, 1e-9);
    const Pixel p2 = project(q, cap.intr);
    EXPECT_NEAR(p2.u, c.p2.u, 1e-9);
    EXPECT_NEAR(p2.v, c.p2.v, 1e-9);
    // Pure-x baseline: zero vertical disparity, positive horizontal.
    EXPECT_NEAR(c.p2.v, c.p1.v, 1e-9);
    EXPECT_LT(c.p2.u, c.p1.u);
  }
}

TEST(Capture, DeterministicAcrossRuns) {
  const Terrain terrain = generate_terrain(7);
  const StereoRig rig = default_rig(terrain, 96, 96);
  const StereoCapture a = simulate_stereo_capture(terrain, rig, 8);
  const StereoCapture b = simulate_stereo_capture(terrain, rig, 8);
  EXPECT_EQ(a.left.data, b.left.data);
  EXPECT_EQ(a.right.data, b.right.data);
  EXPECT_EQ(a.depth_left.values, b.depth_left.values);
  EXPECT_EQ(a.correspondences.size(), b.correspondences.size());
}

TEST(Capture, CameraUnderTerrainThrows) {
  TerrainParams p;
  p.amplitude = 0.0;
  const Terrain flat = generate_terrain(2, p);
  StereoRig rig = default_rig(flat, 32, 32);
  rig.camera_to_world.translation.y() = 1.0;  // below the y=0 surface
  rig.camera_to_world.rotation = Eigen::Matrix3d::Identity();
  EXPECT_THROW(simulate_stereo_capture(flat, rig, 8), NoVisibleTerrain);
}

TEST(Perturb, ImageKindsAndRecords) {
  const Image img = testsupport::clean_image(60, 48, 48);
  const auto [blurred, brec] = perturb_blur(img, 2.0);
  EXPECT_EQ(brec.kind, "blur");
  EXPECT_DOUBLE_EQ(brec.sigma, 2.0);
  EXPECT_NE(blurred.data, img.data);

  const auto [gray, grec] = perturb_grayscale(img);
  EXPECT_EQ(grec.kind, "grayscale");
  for (int y = 0; y < gray.height; ++y)
    for (int x = 0; x < gray.width; ++x) {
      const uint8_t* p = gray.px(x, y);
      EXPECT_EQ(p[0], p[1]);
      EXPECT_EQ(p[1], p[2]);
    }

  const auto [flat, frec] = perturb_constant(img, 77);
  EXPECT_EQ(frec.kind, "constant");
  for (uint8_t v : flat.data) EXPECT_EQ(v, 77);
}

TEST(Perturb, DepthAffineRoundTripsThroughAlignment) {
  const StereoCapture& cap = small_capture();
  const auto [warped, rec] = perturb_depth_affine(cap.depth_left, 1.8, -0.4);
  EXPECT_EQ(rec.kind, "depth_affine");
  // Recover the applied affine with the closed-form aligner.
  std::vector<double> d1, d2;
  for (size_t i = 0; i < warped.values.size(); ++i)
    if (warped.valid[i] && cap.depth_left.valid[i]) {
      d1.push_back(warped.values[i]);
      d2.push_back(cap.depth_left.values[i]);
    }
  const DepthAlignment align = align_depth(d1, d2);
  EXPECT_NEAR(align.s, 1.0 / 1.8, 1e-4);
  EXPECT_NEAR(align.b, 0.4 / 1.8, 1e-3);
  EXPECT_LT(align.residual_rms, 1e-4);
}

TEST(Perturb, PoseNoiseHasRequestedMagnitudes) {
  Pose base;
  base.rotation = Eigen::AngleAxisd(0.3, Eigen::Vector3d::UnitY()).toRotationMatrix();
  base.translation = {1.0, 2.0, 3.0};
  const auto [noisy, rec] = perturb_pose(base, 0.01, 0.05, 42);
  EXPECT_EQ(rec.kind, "pose_noise");
  EXPECT_NEAR((noisy.translation - base.translation).norm(), 0.05, 1e-12);
  const Eigen::AngleAxisd aa(noisy.rotation * base.rotation.transpose());
  EXPECT_NEAR(aa.angle(), 0.01, 1e-9);
  EXPECT_TRUE(noisy.is_valid(1e-9));
  // Same seed reproduces the same perturbation.
  const auto [again, rec2] = perturb_pose(base, 0.01, 0.05, 42);
  EXPECT_EQ(noisy.rotation, again.rotation);
  EXPECT_EQ(noisy.translation, again.translation);
}

TEST(Perturb, OutliersReplaceExactFraction) {
  const StereoCapture& cap = small_capture();
  const auto& corrs = cap.correspondences;
  const auto [out, rec] = perturb_outliers(corrs, 0.25, cap.intr.width, cap.intr.height, 11);
  EXPECT_EQ(rec.kind, "outliers");
  EXPECT_EQ(rec.outlier_indices.size(),
            static_cast<size_t>(std::lround(0.25 * corrs.size())));
  size_t changed = 0;
  for (size_t i = 0; i < corrs.size(); ++i) {
    EXPECT_EQ(out[i].p1.u, corrs[i].p1.u);  // p1 never touched
    if (out[i].p2.u != corrs[i].p2.u || out[i].p2.v != corrs[i].p2.v) ++changed;
  }
  EXPECT_LE(changed, rec.outlier_indices.size());
  for (size_t idx : rec.outlier_indices) EXPECT_LT(idx, corrs.size());
  // Deterministic for a fixed seed.
  const auto [out2, rec2] = perturb_outliers(corrs, 0.25, cap.intr.width, cap.intr.height, 11);
  EXPECT_EQ(rec2.outlier_indices, rec.outlier_indices);
  EXPECT_THROW(perturb_outliers(corrs, 1.5, 96, 96, 0), BadSpec);
}

}  // namespace
}  // namespace mars
