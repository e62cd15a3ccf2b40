#include <cmath>
#include <map>
#include <random>
#include <set>
#include <tuple>

#include "doctest.h"
#include "f2f/error.hpp"
#include "f2f/pointcloud.hpp"
#include "oracles.hpp"

using namespace f2f;

namespace {

std::vector<Neighbor> brute_knn(const std::vector<Vec3>& pts, const Vec3& q, std::size_t k) {
  std::vector<Neighbor> all;
  for (std::size_t i = 0; i < pts.size(); ++i) all.push_back({i, (pts[i] - q).squaredNorm()});
  std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
    return std::tie(a.dist2, a.index) < std::tie(b.dist2, b.index);
  });
  all.resize(std::min(k, all.size()));
  return all;
}

InsPoseBuffer moving_buffer(const Vec3& vel, const Vec3& omega, double t0, double t1, double dt) {
  InsPoseBuffer buf;
  for (double t = t0; t <= t1 + 1e-12; t += dt) {
    NavState x;
    x.t = t;
    x.p = vel * t;
    x.q = quat_exp(omega * t);
    x.v = vel;
    buf.push(x);
  }
  return buf;
}

}  // namespace

TEST_CASE("voxel_downsample") {
  std::vector<Vec3> two{Vec3(0.1, 0.1, 0.1), Vec3(0.2, 0.1, 0.1)};
  auto out = voxel_downsample(std::span<const Vec3>(two), 0.5);
  REQUIRE(out.size() == 1);
  CHECK((out[0] - Vec3(0.15, 0.1, 0.1)).norm() < 1e-15);

  std::vector<Vec3> grid;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j)
      for (int k = 0; k < 5; ++k) grid.emplace_back(i, j, k);
  out = voxel_downsample(std::span<const Vec3>(grid), kVoxelLeaf);
  CHECK(out.size() == grid.size());

  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::vector<Vec3> cloud;
  for (int i = 0; i < 10000; ++i) cloud.emplace_back(u(rng), u(rng), u(rng));
  std::set<std::tuple<long, long, long>> occupied;
  for (const auto& p : cloud)
    occupied.insert({std::lround(std::floor(p.x() / 0.5)), std::lround(std::floor(p.y() / 0.5)),
                     std::lround(std::floor(p.z() / 0.5))});
  out = voxel_downsample(std::span<const Vec3>(cloud), 0.5);
  CHECK(out.size() == occupied.size());
  // Idempotent.
  const auto twice = voxel_downsample(std::span<const Vec3>(out), 0.5);
  REQUIRE(twice.size() == out.size());
  for (std::size_t i = 0; i < out.size(); ++i) CHECK((twice[i] - out[i]).norm() == 0.0);
  CHECK_THROWS_AS(voxel_downsample(std::span<const Vec3>(two), 0.0), std::invalid_argument);
}

TEST_CASE("default leaf size") { CHECK(kVoxelLeaf == 0.5); }

TEST_CASE("knn matches brute force") {
  std::mt19937_64 rng(32);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::vector<Vec3> pts;
  for (int i = 0; i < 1000; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
  // Duplicates exercise the tie-breaking.
  for (int i = 0; i < 20; ++i) pts.push_back(pts[static_cast<std::size_t>(i * 7)]);
  const KdTree tree(pts);
  for (int q = 0; q < 100; ++q) {
    const Vec3 query(u(rng), u(rng), u(rng));
    const auto got = tree.knn(query, 5);
    const auto want = brute_knn(pts, query, 5);
    REQUIRE(got.size() == want.size());
    for (std::size_t k = 0; k < got.size(); ++k) {
      CHECK(got[k].index == want[k].index);
      CHECK(got[k].dist2 == want[k].dist2);
    }
  }
  const auto self = tree.knn(pts[3], 5);
  CHECK(self[0].dist2 == 0.0);

  const KdTree one(std::vector<Vec3>{Vec3(1, 2, 3)});
  const auto r = one.knn(Vec3::Zero(), 5);
  REQUIRE(r.size() == 1);
  CHECK(r[0].index == 0);
  CHECK_THROWS_AS(KdTree().knn(Vec3::Zero(), 5), Error);
}

TEST_CASE("fit_plane") {
  std::vector<Vec3> pts{{0, 0, 2}, {1, 0, 2}, {0, 1, 2}, {1, 1, 2}, {0.5, 0.3, 2}};
  auto plane = fit_plane(pts);
  REQUIRE(plane);
  CHECK(std::abs(std::abs(plane->n.z()) - 1.0) < 1e-12);
  CHECK(std::abs(plane->n.norm() - 1.0) < 1e-12);
  CHECK(std::abs(plane->d + 2.0 * plane->n.z()) < 1e-12);

  auto lifted = pts;
  lifted[4].z() += 0.2;
  CHECK_FALSE(fit_plane(lifted));

  std::vector<Vec3> line;
  for (int k = 0; k < 5; ++k) line.emplace_back(k, 2 * k, 3 + k);
  CHECK_FALSE(fit_plane(line));
  CHECK(kPlaneFitGate == 0.1);

  // Tilted plane with small offsets still passes and respects the gate.
  const Vec3 n = Vec3(1, 2, 3).normalized();
  const Vec3 u = n.unitOrthogonal(), v = n.cross(u);
  std::vector<Vec3> tilted;
  for (int k = 0; k < 5; ++k) tilted.push_back(4.0 * n + std::cos(k) * u + std::sin(k) * v + 0.01 * (k % 2) * n);
  plane = fit_plane(tilted);
  REQUIRE(plane);
  for (const auto& p : tilted) CHECK(std::abs(plane->distance(p)) < 0.1);
}

TEST_CASE("undistort_frame") {
  LidarFrame f;
  f.stamp = 1.0;
  for (int k = 0; k < 10; ++k) f.points.push_back({0.01 * k, Vec3(5, k, 1)});

  const auto still = moving_buffer(Vec3::Zero(), Vec3::Zero(), 0.0, 2.0, 0.005);
  const auto same = undistort_frame(f, still, Extrinsics{}, 0.0);
  for (std::size_t k = 0; k < f.points.size(); ++k) CHECK((same.points[k].p - f.points[k].p).norm() < 1e-12);

  const auto moving = moving_buffer(Vec3(1, 0, 0), Vec3::Zero(), 0.0, 2.0, 0.005);
  LidarFrame g;
  g.stamp = 1.0;
  g.points.push_back({0.05, Vec3(3, 0, 0)});
  const auto out = undistort_frame(g, moving, Extrinsics{}, 0.0);
  CHECK((out.points[0].p - Vec3(3.05, 0, 0)).norm() < 1e-12);

  // World position is preserved under rotation, extrinsics and delay.
  const auto spin = moving_buffer(Vec3(0.5, -0.2, 0.1), Vec3(0.1, -0.2, 0.6), 0.0, 2.0, 0.005);
  Extrinsics ext{Vec3(0.1, 0.2, -0.05), quat_exp(Vec3(0.02, -0.01, 0.03))};
  const double td = 0.004;
  const auto out2 = undistort_frame(f, spin, ext, td);
  const Pose anchor = lidar_pose(spin, ext, f.stamp + td);
  for (std::size_t k = 0; k < f.points.size(); ++k) {
    const Pose at = lidar_pose(spin, ext, f.stamp + td + f.points[k].t_offset);
    CHECK((anchor.transform(out2.points[k].p) - at.transform(f.points[k].p)).norm() < 1e-12);
  }

  LidarFrame late;
  late.stamp = 1.95;
  late.points.push_back({0.09, Vec3(1, 0, 0)});
  CHECK_THROWS_AS(undistort_frame(late, spin, ext, 0.0), Error);
}

TEST_CASE("build_keyframe_map") {
  const auto still = moving_buffer(Vec3::Zero(), Vec3::Zero(), 0.0, 2.0, 0.005);
  LidarFrame kf;
  kf.stamp = 1.0;
  for (int k = 0; k < 50; ++k) kf.points.push_back({0.0, Vec3(5, 0.3 * k, 0.1 * (k % 7))});
  const auto m0 = build_keyframe_map(0, kf, {}, still, Extrinsics{}, 0.0);
  std::vector<Vec3> raw;
  for (const auto& p : kf.points) raw.push_back(p.p);
  CHECK(m0.size() == voxel_downsample(std::span<const Vec3>(raw), 0.5).size());

  // Intermediate frame on a moving platform lands at its rigidly transformed position.
  const auto moving = moving_buffer(Vec3(1, 0.5, 0), Vec3(0, 0, 0.3), 0.0, 2.0, 0.005);
  LidarFrame mid;
  mid.stamp = 0.8;
  mid.points.push_back({0.0, Vec3(7.3, 2.1, 0.4)});
  LidarFrame lone;
  lone.stamp = 1.0;
  const std::vector<LidarFrame> inter{mid};
  const auto m1 = build_keyframe_map(1, lone, inter, moving, Extrinsics{}, 0.0, 0.5);
  REQUIRE(m1.size() == 1);
  const Pose T = lidar_pose(moving, Extrinsics{}, 1.0).inverse() * lidar_pose(moving, Extrinsics{}, 0.8);
  CHECK((m1.points()[0] - T.transform(mid.points[0].p)).norm() < 1e-10);
  CHECK(m1.epoch() == 1.0);
}

TEST_CASE("range_filter") {
  std::vector<LidarPoint> pts{{0, Vec3(0.1, 0, 0)}, {0, Vec3(10, 0, 0)}, {0, Vec3(300, 0, 0)},
                              {0, Vec3(NAN, 0, 0)}};
  const auto out = range_filter(pts);
  REQUIRE(out.size() == 1);
  CHECK(out[0].p.x() == 10.0);
}
