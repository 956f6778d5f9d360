#include "mars/geometry.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <vector>

#include "mars/camera.hpp"
#include "mars/errors.hpp"
#include "test_support.hpp"

namespace mars {
namespace {

using testsupport::TempDir;
using testsupport::clean_image;

Intrinsics test_intr() {
  Intrinsics intr;
  intr.fx = 640.0;
  intr.fy = 620.0;
  intr.cx = 319.5;
  intr.cy = 239.5;
  intr.width = 640;
  intr.height = 480;
  return intr;
}

Pose test_pose(double angle = 0.15) {
  Pose p;
  p.rotation =
      Eigen::AngleAxisd(angle, Eigen::Vector3d(0.2, 1.0, -0.3).normalized()).toRotationMatrix();
  p.translation = {0.3, -0.1, 0.2};
  return p;
}

// Random scene points that sit in front of both the identity view and `pose`.
std::vector<Eigen::Vector3d> scene_points(size_t n, const Pose& pose, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> xy(-2.0, 2.0), z(3.0, 12.0);
  std::vector<Eigen::Vector3d> pts;
  while (pts.size() < n) {
    const Eigen::Vector3d p(xy(rng), xy(rng), z(rng));
    if (pose.apply(p).z() > 0.5) pts.push_back(p);
  }
  return pts;
}

std::vector<Pixel> project_all(const std::vector<Eigen::Vector3d>& pts, const Pose& pose,
                               const Intrinsics& intr) {
  std::vector<Pixel> px;
  px.reserve(pts.size());
  for (const auto& p : pts) px.push_back(project_distorted(pose.apply(p), intr));
  return px;
}

TEST(ReprojectionResiduals, ExactProjectionsHaveZeroRms) {
  const Intrinsics intr = test_intr();
  const Pose pose = test_pose();
  const auto pts = scene_points(40, pose, 1);
  const auto px = project_all(pts, pose, intr);
  const ResidualReport rep = reprojection_residuals(pose, intr, pts, px);
  EXPECT_EQ(rep.behind_camera, 0u);
  EXPECT_NEAR(rep.rms, 0.0, 1e-9);
  for (double r : rep.residuals) EXPECT_NEAR(r, 0.0, 1e-9);
}

TEST(ReprojectionResiduals, BehindCameraIsNanAndCounted) {
  const Intrinsics intr = test_intr();
  Pose identity;
  const std::vector<Eigen::Vector3d> pts{{0, 0, 5.0}, {0, 0, -5.0}};
  const std::vector<Pixel> px{{intr.cx, intr.cy}, {intr.cx, intr.cy}};
  const ResidualReport rep = reprojection_residuals(identity, intr, pts, px);
  EXPECT_EQ(rep.behind_camera, 1u);
  EXPECT_NEAR(rep.residuals[0], 0.0, 1e-12);
  EXPECT_TRUE(std::isnan(rep.residuals[1]));
  EXPECT_THROW(reprojection_residuals(identity, intr, pts, {px[0]}), ShapeMismatch);
}

TEST(Pnp, ExactRecoveryWithoutRansac) {
  const Intrinsics intr = test_intr();
  const Pose truth = test_pose();
  const auto pts = scene_points(60, truth, 2);
  const auto px = project_all(pts, truth, intr);
  PnpOptions opt;
  opt.ransac_threshold = 0.0;
  const PnpResult res = solve_pnp(pts, px, intr, opt);
  EXPECT_LT((res.pose.rotation - truth.rotation).norm(), 1e-6);
  EXPECT_LT((res.pose.translation - truth.translation).norm(), 1e-6);
  EXPECT_LT(res.reprojection_rms, 1e-6);
  // Gauss-Newton with step halving must never increase the cost.
  for (size_t i = 1; i < res.cost_history.size(); ++i)
    EXPECT_LE(res.cost_history[i], res.cost_history[i - 1] + 1e-9);
}

TEST(Pnp, ExactRecoveryWithDistortedObservations) {
  Intrinsics intr = test_intr();
  intr.k0 = 0.002;
  intr.k1 = 1e-4;
  intr.k2 = -2e-6;
  const Pose truth = test_pose(0.1);
  const auto pts = scene_points(50, truth, 3);
  const auto px = project_all(pts, truth, intr);  // distorted pixels
  PnpOptions opt;
  opt.ransac_threshold = 0.0;
  const PnpResult res = solve_pnp(pts, px, intr, opt);
  EXPECT_LT((res.pose.rotation - truth.rotation).norm(), 1e-5);
  EXPECT_LT((res.pose.translation - truth.translation).norm(), 1e-5);
}

TEST(Pnp, NoisyObservations) {
  const Intrinsics intr = test_intr();
  const Pose truth = test_pose();
  const auto pts = scene_points(200, truth, 4);
  auto px = project_all(pts, truth, intr);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> noise(0.0, 0.5);
  for (Pixel& p : px) {
    p.u += noise(rng);
    p.v += noise(rng);
  }
  PnpOptions opt;
  opt.ransac_threshold = 0.0;
  const PnpResult res = solve_pnp(pts, px, intr, opt);
  EXPECT_LT((res.pose.rotation - truth.rotation).norm(), 5e-3);
  EXPECT_LT((res.pose.translation - truth.translation).norm(), 2e-2);
  EXPECT_GT(res.reprojection_rms, 0.2);
  EXPECT_LT(res.reprojection_rms, 1.0);
}

TEST(Pnp, RansacRejectsPlantedOutliers) {
  const Intrinsics intr = test_intr();
  const Pose truth = test_pose();
  const auto pts = scene_points(100, truth, 6);
  auto px = project_all(pts, truth, intr);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> uu(0.0, 639.0), uv(0.0, 479.0);
  std::vector<size_t> planted;
  for (size_t i = 0; i < px.size(); i += 4) {  // corrupt every 4th match
    const Pixel true_px = px[i];
    Pixel bad;
    do {
      bad = {uu(rng), uv(rng)};
    } while (std::hypot(bad.u - true_px.u, bad.v - true_px.v) < 5.0);
    px[i] = bad;
    planted.push_back(i);
  }
  PnpOptions opt;
  opt.ransac_threshold = 2.0;
  opt.seed = 99;
  const PnpResult res = solve_pnp(pts, px, intr, opt);
  EXPECT_LT((res.pose.rotation - truth.rotation).norm(), 1e-6);
  EXPECT_LT((res.pose.translation - truth.translation).norm(), 1e-6);
  for (size_t i : planted) EXPECT_EQ(res.inliers[i], 0) << "outlier " << i << " kept";
  size_t kept = 0;
  for (uint8_t m : res.inliers) kept += m;
  EXPECT_EQ(kept, pts.size() - planted.size());
}

TEST(Pnp, DeterministicForFixedSeed) {
  const Intrinsics intr = test_intr();
  const Pose truth = test_pose();
  const auto pts = scene_points(80, truth, 8);
  auto px = project_all(pts, truth, intr);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> uu(0.0, 639.0), uv(0.0, 479.0);
  for (size_t i = 0; i < px.size(); i += 5) px[i] = {uu(rng), uv(rng)};
  PnpOptions opt;
  opt.ransac_threshold = 2.0;
  opt.seed = 1234;
  const PnpResult a = solve_pnp(pts, px, intr, opt);
  const PnpResult b = solve_pnp(pts, px, intr, opt);
  EXPECT_EQ(a.pose.rotation, b.pose.rotation);
  EXPECT_EQ(a.pose.translation, b.pose.translation);
  EXPECT_EQ(a.inliers, b.inliers);
  EXPECT_EQ(a.cost_history, b.cost_history);
}

TEST(Pnp, InputValidation) {
  const Intrinsics intr = test_intr();
  const Pose truth = test_pose();
  const auto pts = scene_points(5, truth, 10);
  const auto px = project_all(pts, truth, intr);
  EXPECT_THROW(solve_pnp(pts, px, intr), TooFewPoints);
  const auto pts6 = scene_points(6, truth, 11);
  EXPECT_THROW(solve_pnp(pts6, px, intr), ShapeMismatch);
}

TEST(Pnp, CollinearPointsAreDegenerate) {
  const Intrinsics intr = test_intr();
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < 10; ++i) pts.push_back(Eigen::Vector3d(0.1 * i, 0.2 * i, 5.0 + 0.3 * i));
  Pose identity;
  const auto px = project_all(pts, identity, intr);
  PnpOptions opt;
  opt.ransac_threshold = 0.0;
  EXPECT_THROW(solve_pnp(pts, px, intr, opt), DegenerateConfiguration);
}

TEST(AlignDepth, ExactAffineRelationRecovered) {
  std::vector<double> d1, d2;
  for (int i = 0; i < 50; ++i) {
    const double d = 2.0 + 0.17 * i;
    d1.push_back(d);
    d2.push_back(2.0 * d + 0.3);
  }
  const DepthAlignment a = align_depth(d1, d2);
  EXPECT_NEAR(a.s, 2.0, 1e-12);
  EXPECT_NEAR(a.b, 0.3, 1e-12);
  EXPECT_NEAR(a.residual_rms, 0.0, 1e-12);
  EXPECT_EQ(a.sample_count, 50u);
}

// Independent oracle: solve the same least-squares problem with Eigen's QR
// on the explicit [d1 | 1] design matrix.
TEST(AlignDepth, MatchesLeastSquaresOracle) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> noise(0.0, 0.05);
  std::uniform_real_distribution<double> ud(1.0, 15.0);
  std::vector<double> d1, d2;
  for (int i = 0; i < 200; ++i) {
    const double d = ud(rng);
    d1.push_back(d);
    d2.push_back(1.7 * d - 0.4 + noise(rng));
  }
  const DepthAlignment a = align_depth(d1, d2);

  Eigen::MatrixXd design(d1.size(), 2);
  Eigen::VectorXd rhs(d1.size());
  for (size_t i = 0; i < d1.size(); ++i) {
    design(i, 0) = d1[i];
    design(i, 1) = 1.0;
    rhs(i) = d2[i];
  }
  const Eigen::Vector2d sol = design.colPivHouseholderQr().solve(rhs);
  EXPECT_NEAR(a.s, sol[0], 1e-9);
  EXPECT_NEAR(a.b, sol[1], 1e-9);
  const double oracle_rms = std::sqrt((design * sol - rhs).squaredNorm() / d1.size());
  EXPECT_NEAR(a.residual_rms, oracle_rms, 1e-9);
}

TEST(AlignDepth, DegenerateInputs) {
  EXPECT_THROW(align_depth({1.0}, {2.0}), DegenerateSamples);
  EXPECT_THROW(align_depth({1.0, 2.0}, {2.0}), ShapeMismatch);
  EXPECT_THROW(align_depth({3.0, 3.0, 3.0}, {1.0, 2.0, 3.0}), DegenerateSamples);
}

TEST(AlignDepth, ApplyInvalidatesNonPositiveDepths) {
  DepthMap d(2, 1);
  d.set(0, 0, 1.0f);
  d.set(1, 0, 5.0f);
  DepthAlignment a;
  a.s = 1.0;
  a.b = -2.0;  // first pixel maps to -1
  apply_depth_alignment(d, a);
  EXPECT_FALSE(d.is_valid(0, 0));
  EXPECT_TRUE(d.is_valid(1, 0));
  EXPECT_FLOAT_EQ(d.depth(1, 0), 3.0f);
}

FusionView flat_view(int w, int h, double depth, const Pose& w2c, int id) {
  FusionView v;
  v.image = clean_image(40 + id, w, h);
  v.depth = DepthMap(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) v.depth.set(x, y, static_cast<float>(depth));
  v.intr = test_intr();
  v.intr.width = w;
  v.intr.height = h;
  v.intr.cx = 0.5 * (w - 1);
  v.intr.cy = 0.5 * (h - 1);
  v.world_to_camera = w2c;
  v.view_id = id;
  return v;
}

TEST(Fusion, BackProjectionOracleAndStride) {
  const Pose w2c = test_pose(0.2);
  const FusionView view = flat_view(8, 6, 4.0, w2c, 0);
  const PointCloud cloud = fuse_point_clouds({view}, 2);
  EXPECT_EQ(cloud.points.size(), 4u * 3u);  // ceil(8/2) * ceil(6/2)
  const Pose c2w = w2c.inverse();
  for (const CloudPoint& pt : cloud.points) {
    const Eigen::Vector3d expect = c2w.apply(back_project(pt.source_pixel, 4.0, view.intr));
    EXPECT_LT((pt.position - expect).norm(), 1e-12);
    // Reproject into the source camera: must land back on the source pixel.
    const Pixel re = project(w2c.apply(pt.position), view.intr);
    EXPECT_NEAR(re.u, pt.source_pixel.u, 1e-9);
    EXPECT_NEAR(re.v, pt.source_pixel.v, 1e-9);
    const uint8_t* c = view.image.px(static_cast<int>(pt.source_pixel.u),
                                     static_cast<int>(pt.source_pixel.v));
    EXPECT_EQ(pt.color[0], c[0]);
    EXPECT_EQ(pt.color[1], c[1]);
    EXPECT_EQ(pt.color[2], c[2]);
  }
}

TEST(Fusion, InvalidPixelsSkippedAndErrors) {
  FusionView view = flat_view(4, 4, 3.0, Pose{}, 1);
  view.depth.set(1, 1, 0.0f);  // invalid
  view.depth.set(2, 2, -1.0f);
  const PointCloud cloud = fuse_point_clouds({view});
  EXPECT_EQ(cloud.points.size(), 14u);

  EXPECT_THROW(fuse_point_clouds({view}, 0), BadParams);
  FusionView bad = view;
  bad.depth = DepthMap(3, 4);
  EXPECT_THROW(fuse_point_clouds({bad}), ShapeMismatch);

  FusionView empty = flat_view(2, 2, 1.0, Pose{}, 2);
  for (int i = 0; i < 4; ++i) empty.depth.set(i % 2, i / 2, 0.0f);
  EXPECT_THROW(fuse_point_clouds({empty}), EmptyCloud);
}

TEST(GaussianScales, SingleViewFootprint) {
  const FusionView view = flat_view(8, 8, 5.0, Pose{}, 0);
  const PointCloud cloud = fuse_point_clouds({view});
  const std::vector<double> scales = initial_gaussian_scales(cloud, {view});
  const double favg = 0.5 * (view.intr.fx + view.intr.fy);
  for (size_t i = 0; i < scales.size(); ++i)
    EXPECT_NEAR(scales[i], 5.0 / favg, 1e-12);
}

TEST(GaussianScales, NearestObservingViewWins) {
  // Two identity-orientation cameras at different distances along z.
  FusionView near = flat_view(16, 16, 2.0, Pose{}, 0);
  Pose far_pose;
  far_pose.translation = {0.0, 0.0, 3.0};  // world origin is 3m behind -> sees
                                           // the plane at depth 2 + 3 = 5
  FusionView far = flat_view(16, 16, 5.0, far_pose, 1);
  far.intr.fx = far.intr.fy = 320.0;

  // A point straight down the shared optical axis, fused from the far view.
  PointCloud cloud;
  CloudPoint pt;
  pt.position = {0.0, 0.0, 2.0};
  pt.view_id = 1;
  pt.cam_depth = 5.0;
  pt.source_pixel = {far.intr.cx, far.intr.cy};
  cloud.points.push_back(pt);

  const std::vector<double> scales = initial_gaussian_scales(cloud, {near, far});
  // Both views observe it: dmin = 2 (near view), f averaged over both.
  const double favg = 0.5 * (0.5 * (near.intr.fx + near.intr.fy) + 320.0);
  EXPECT_NEAR(scales[0], 2.0 / favg, 1e-12);
}

TEST(GaussianScales, OutOfViewFallsBackToSourceObservation) {
  FusionView view = flat_view(8, 8, 3.0, Pose{}, 7);
  PointCloud cloud;
  CloudPoint pt;
  pt.position = {0.0, 0.0, -4.0};  // behind the only camera
  pt.view_id = 7;
  pt.cam_depth = 3.0;
  cloud.points.push_back(pt);
  const std::vector<double> scales = initial_gaussian_scales(cloud, {view});
  EXPECT_NEAR(scales[0], 3.0 / (0.5 * (view.intr.fx + view.intr.fy)), 1e-12);
}

TEST(CorrespondenceIo, ByteExactRoundTrip) {
  TempDir dir;
  std::vector<Correspondence> corrs;
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> ud(0.0, 640.0);
  for (int i = 0; i < 20; ++i)
    corrs.push_back({{ud(rng), ud(rng)}, {ud(rng), ud(rng)}, ud(rng) / 640.0});
  const std::string a = dir.str("a.txt"), b = dir.str("b.txt");
  save_correspondences(a, corrs);
  save_correspondences(b, load_correspondences(a));
  std::ifstream fa(a), fb(b);
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_FALSE(sa.str().empty());
  EXPECT_THROW(load_correspondences(dir.str("missing.txt")), IoError);
}

TEST(PointCloudIo, ByteExactRoundTrip) {
  TempDir dir;
  const FusionView view = flat_view(6, 4, 2.5, test_pose(0.3), 3);
  PointCloud cloud = fuse_point_clouds({view});
  const std::vector<double> scales = initial_gaussian_scales(cloud, {view});
  for (size_t i = 0; i < cloud.points.size(); ++i) cloud.points[i].scale = scales[i];
  const std::string a = dir.str("a.txt"), b = dir.str("b.txt");
  save_point_cloud(a, cloud);
  const PointCloud loaded = load_point_cloud(a);
  ASSERT_EQ(loaded.points.size(), cloud.points.size());
  save_point_cloud(b, loaded);
  std::ifstream fa(a), fb(b);
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  EXPECT_EQ(sa.str(), sb.str());
}

}  // namespace
}  // namespace mars
