#include "mars/trajectory.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <fstream>
#include <sstream>

#include "mars/camera.hpp"
#include "mars/errors.hpp"
#include "test_support.hpp"

namespace mars {
namespace {

using testsupport::TempDir;
using testsupport::clean_image;

Pose tilted_anchor() {
  Pose p;
  p.rotation =
      Eigen::AngleAxisd(0.4, Eigen::Vector3d(0.1, 1.0, 0.2).normalized()).toRotationMatrix();
  p.translation = {1.0, -2.0, 0.5};
  return p;
}

TEST(KindNames, RoundTrip) {
  for (TrajectoryKind k : {TrajectoryKind::Orbit, TrajectoryKind::Dolly, TrajectoryKind::Truck,
                           TrajectoryKind::Pan, TrajectoryKind::Spiral, TrajectoryKind::Boom})
    EXPECT_EQ(trajectory_kind_from_string(to_string(k)), k);
  EXPECT_THROW(trajectory_kind_from_string("zoom"), UnknownKind);
}

TEST(DepthStatsFn, PercentilesAndValidity) {
  DepthMap d(10, 1);
  for (int x = 0; x < 10; ++x) d.set(x, 0, static_cast<float>(x + 1));  // 1..10
  const DepthStats s = compute_depth_stats(d);
  EXPECT_FLOAT_EQ(s.p10_depth, 2.0f);
  EXPECT_FLOAT_EQ(s.median_depth, 6.0f);
  EXPECT_FLOAT_EQ(s.p90_depth, 10.0f);

  DepthMap invalid(4, 1);
  EXPECT_THROW(compute_depth_stats(invalid), BadParams);
}

TEST(Canonical, CommonInvariants) {
  const Pose anchor = tilted_anchor();
  TrajectoryParams params;
  params.extent = 0.8;
  params.frames = 25;
  for (TrajectoryKind k : {TrajectoryKind::Orbit, TrajectoryKind::Dolly, TrajectoryKind::Truck,
                           TrajectoryKind::Pan, TrajectoryKind::Spiral, TrajectoryKind::Boom}) {
    const Trajectory traj = canonical_trajectory(k, params, anchor);
    ASSERT_EQ(traj.poses.size(), 25u);
    ASSERT_EQ(traj.timestamps.size(), 25u);
    EXPECT_DOUBLE_EQ(traj.timestamps.front(), 1.0);
    EXPECT_DOUBLE_EQ(traj.timestamps.back(), 25.0);
    for (size_t i = 1; i < traj.timestamps.size(); ++i)
      EXPECT_LT(traj.timestamps[i - 1], traj.timestamps[i]);
    // First frame is the anchor; every pose is a valid rigid transform.
    EXPECT_LT((traj.poses.front().rotation - anchor.rotation).norm(), 1e-12);
    EXPECT_LT((traj.poses.front().translation - anchor.translation).norm(), 1e-12);
    for (const Pose& p : traj.poses) EXPECT_TRUE(p.is_valid(1e-9));
  }
  EXPECT_EQ(canonical_trajectory(TrajectoryKind::Dolly, {}).poses.size(), 49u);
}

TEST(Canonical, DollyMovesAlongViewAxis) {
  const Pose anchor = tilted_anchor();
  TrajectoryParams params;
  params.extent = 0.6;
  params.frames = 7;
  const Trajectory traj = canonical_trajectory(TrajectoryKind::Dolly, params, anchor);
  const Eigen::Vector3d axis = anchor.rotation.col(2);
  for (size_t i = 0; i < traj.poses.size(); ++i) {
    const double f = static_cast<double>(i) / 6.0;
    EXPECT_LT((traj.poses[i].translation - (anchor.translation + f * 0.6 * axis)).norm(), 1e-12);
    EXPECT_LT((traj.poses[i].rotation - anchor.rotation).norm(), 1e-12);
  }
}

TEST(Canonical, TruckAndBoomAxes) {
  const Pose anchor = tilted_anchor();
  TrajectoryParams params;
  params.extent = 0.5;
  params.frames = 2;
  const Trajectory truck = canonical_trajectory(TrajectoryKind::Truck, params, anchor);
  EXPECT_LT((truck.poses.back().translation -
             (anchor.translation + 0.5 * anchor.rotation.col(0))).norm(),
            1e-12);
  const Trajectory boom = canonical_trajectory(TrajectoryKind::Boom, params, anchor);
  // Positive extent moves against the camera down axis, i.e. upward.
  EXPECT_LT((boom.poses.back().translation -
             (anchor.translation - 0.5 * anchor.rotation.col(1))).norm(),
            1e-12);
}

TEST(Canonical, PanRotatesInPlaceTowardPositiveX) {
  TrajectoryParams params;
  params.extent = 0.4;
  params.frames = 9;
  const Trajectory traj = canonical_trajectory(TrajectoryKind::Pan, params);
  for (const Pose& p : traj.poses) EXPECT_LT(p.translation.norm(), 1e-12);
  // The view direction of the last frame tips toward +x by the full extent.
  const Eigen::Vector3d view = traj.poses.back().rotation.col(2);
  EXPECT_NEAR(view.x(), std::sin(0.4), 1e-12);
  EXPECT_NEAR(view.z(), std::cos(0.4), 1e-12);
}

TEST(Canonical, OrbitKeepsPivotOnAxisAtConstantRadius) {
  const Pose anchor = tilted_anchor();
  TrajectoryParams params;
  params.extent = 0.9;
  params.frames = 13;
  params.look_at_depth = 6.0;
  const Eigen::Vector3d pivot = anchor.translation + 6.0 * anchor.rotation.col(2);
  const Trajectory traj = canonical_trajectory(TrajectoryKind::Orbit, params, anchor);
  for (const Pose& p : traj.poses) {
    EXPECT_NEAR((p.translation - pivot).norm(), 6.0, 1e-9);
    // The pivot stays on the optical axis: camera-frame coordinates (0,0,6).
    const Eigen::Vector3d local = p.rotation.transpose() * (pivot - p.translation);
    EXPECT_NEAR(local.x(), 0.0, 1e-9);
    EXPECT_NEAR(local.y(), 0.0, 1e-9);
    EXPECT_NEAR(local.z(), 6.0, 1e-9);
  }
}

TEST(Canonical, SpiralShrinksRadiusThirtyPercent) {
  const Pose anchor = tilted_anchor();
  TrajectoryParams params;
  params.extent = 0.7;
  params.frames = 11;
  params.look_at_depth = 8.0;
  const Eigen::Vector3d pivot = anchor.translation + 8.0 * anchor.rotation.col(2);
  const Trajectory traj = canonical_trajectory(TrajectoryKind::Spiral, params, anchor);
  for (size_t i = 0; i < traj.poses.size(); ++i) {
    const double f = static_cast<double>(i) / 10.0;
    EXPECT_NEAR((traj.poses[i].translation - pivot).norm(), 8.0 * (1.0 - 0.3 * f), 1e-9);
  }
}

TEST(Canonical, RejectsBadParams) {
  TrajectoryParams params;
  params.frames = 1;
  EXPECT_THROW(canonical_trajectory(TrajectoryKind::Dolly, params), BadParams);
  params.frames = 5;
  params.extent = 0.0;
  EXPECT_THROW(canonical_trajectory(TrajectoryKind::Dolly, params), BadParams);
}

TEST(DepthAdaptive, ScalesDisplacementsAboutFirstPose) {
  TrajectoryParams params;
  params.extent = 1.0;
  params.frames = 5;
  const Trajectory base = canonical_trajectory(TrajectoryKind::Dolly, params, tilted_anchor());
  DepthStats stats;
  stats.median_depth = 25.0;  // factor 2.5 at reference 10
  const Trajectory scaled = depth_adaptive_scale(base, stats, 10.0);
  EXPECT_DOUBLE_EQ(scaled.scale_factor, 2.5);
  const Eigen::Vector3d origin = base.poses.front().translation;
  for (size_t i = 0; i < base.poses.size(); ++i) {
    const Eigen::Vector3d expect = origin + 2.5 * (base.poses[i].translation - origin);
    EXPECT_LT((scaled.poses[i].translation - expect).norm(), 1e-12);
    EXPECT_EQ(scaled.poses[i].rotation, base.poses[i].rotation);
  }
}

TEST(DepthAdaptive, FactorIsClamped) {
  TrajectoryParams params;
  params.frames = 3;
  const Trajectory base = canonical_trajectory(TrajectoryKind::Truck, params);
  DepthStats stats;
  stats.median_depth = 1000.0;
  EXPECT_DOUBLE_EQ(depth_adaptive_scale(base, stats, 10.0).scale_factor, 20.0);
  stats.median_depth = 0.01;
  EXPECT_DOUBLE_EQ(depth_adaptive_scale(base, stats, 10.0).scale_factor, 0.05);
  stats.median_depth = 0.0;
  EXPECT_THROW(depth_adaptive_scale(base, stats, 10.0), BadParams);
}

TEST(Interpolate, ExactAtKeysLinearBetween) {
  TrajectoryParams params;
  params.extent = 1.0;
  params.frames = 4;
  const Trajectory traj = canonical_trajectory(TrajectoryKind::Dolly, params, tilted_anchor());
  for (size_t i = 0; i < traj.poses.size(); ++i) {
    const Pose p = interpolate_pose(traj, traj.timestamps[i]);
    EXPECT_EQ(p.rotation, traj.poses[i].rotation);
    EXPECT_EQ(p.translation, traj.poses[i].translation);
  }
  const Pose mid = interpolate_pose(traj, 1.5);
  const Eigen::Vector3d expect =
      0.5 * (traj.poses[0].translation + traj.poses[1].translation);
  EXPECT_LT((mid.translation - expect).norm(), 1e-12);
  EXPECT_THROW(interpolate_pose(traj, 0.5), OutOfRange);
  EXPECT_THROW(interpolate_pose(traj, 4.5), OutOfRange);
}

TEST(Interpolate, SlerpHalfAngleForPan) {
  TrajectoryParams params;
  params.extent = 0.8;
  params.frames = 2;
  const Trajectory traj = canonical_trajectory(TrajectoryKind::Pan, params);
  const Pose mid = interpolate_pose(traj, 1.5);
  // Slerp between yaw 0 and yaw 0.8 at f=0.5 is exactly yaw 0.4.
  const Eigen::Matrix3d expect =
      Eigen::AngleAxisd(0.4, Eigen::Vector3d::UnitY()).toRotationMatrix();
  EXPECT_LT((mid.rotation - expect).norm(), 1e-9);
}

TEST(Captions, RuleTable) {
  TrajectoryParams params;
  params.extent = 0.5;
  params.frames = 5;
  EXPECT_EQ(describe_motion(canonical_trajectory(TrajectoryKind::Dolly, params)),
            "The camera moves forward.");
  EXPECT_EQ(describe_motion(canonical_trajectory(TrajectoryKind::Truck, params)),
            "The camera moves right.");
  EXPECT_EQ(describe_motion(canonical_trajectory(TrajectoryKind::Boom, params)),
            "The camera moves up.");
  EXPECT_EQ(describe_motion(canonical_trajectory(TrajectoryKind::Pan, params)),
            "The camera pans right.");
  EXPECT_EQ(describe_motion(canonical_trajectory(TrajectoryKind::Orbit, params)),
            "The camera orbits around the scene.");
  EXPECT_EQ(describe_motion(canonical_trajectory(TrajectoryKind::Spiral, params)),
            "The camera orbits while moving forward.");
  Trajectory empty;
  EXPECT_EQ(describe_motion(empty), "The camera is static.");
}

TEST(Captions, StableUnderAnchorChangeAndResampling) {
  TrajectoryParams params;
  params.extent = 0.5;
  params.frames = 9;
  const Trajectory traj =
      canonical_trajectory(TrajectoryKind::Dolly, params, tilted_anchor());
  EXPECT_EQ(describe_motion(traj), "The camera moves forward.");

  // Keep only every other frame: the net motion, and thus the caption, holds.
  Trajectory sparse = traj;
  sparse.poses.clear();
  sparse.timestamps.clear();
  for (size_t i = 0; i < traj.poses.size(); i += 2) {
    sparse.poses.push_back(traj.poses[i]);
    sparse.timestamps.push_back(traj.timestamps[i]);
  }
  EXPECT_EQ(describe_motion(sparse), "The camera moves forward.");
}

TEST(TrajectoryIo, ByteExactRoundTrip) {
  TempDir dir;
  TrajectoryParams params;
  params.extent = 0.9;
  params.frames = 6;
  Trajectory traj = canonical_trajectory(TrajectoryKind::Spiral, params, tilted_anchor());
  traj.scale_factor = 1.75;
  const std::string a = dir.str("a.txt"), b = dir.str("b.txt");
  save_trajectory(a, traj);
  const Trajectory loaded = load_trajectory(a);
  EXPECT_EQ(loaded.kind, TrajectoryKind::Spiral);
  ASSERT_EQ(loaded.poses.size(), traj.poses.size());
  EXPECT_DOUBLE_EQ(loaded.scale_factor, 1.75);
  for (size_t i = 0; i < traj.poses.size(); ++i) {
    EXPECT_EQ(loaded.poses[i].rotation, traj.poses[i].rotation);
    EXPECT_EQ(loaded.poses[i].translation, traj.poses[i].translation);
  }
  save_trajectory(b, loaded);
  std::ifstream fa(a), fb(b);
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_THROW(load_trajectory(dir.str("missing.txt")), IoError);
}

}  // namespace
}  // namespace mars
