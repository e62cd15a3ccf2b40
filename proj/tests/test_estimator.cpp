#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "doctest.h"
#include "f2f/error.hpp"
#include "f2f/estimator.hpp"
#include "f2f/evaluate.hpp"
#include "f2f/pipeline.hpp"
#include "sim_window.hpp"

using namespace f2f;
using nlls::BlockKey;
using nlls::Manifold;

namespace {

using simwin::default_sigma;
using simwin::state_prior;
using simwin::values3;
using simwin::values4;

/// Constant velocity and attitude, so noiseless preintegration is exact.
/// Associations use exact planes through the true world points.
struct LinearScene {
  Quat q = Quat(euler_to_rotation(0.05, -0.03, 0.8));
  Vec3 v = Vec3(1.0, 0.2, -0.05);
  Extrinsics ext{Vec3(0.05, -0.02, 0.03), quat_exp(Vec3(0.01, -0.02, 0.015))};
  std::vector<ImuSample> imu;

  LinearScene() {
    const Vec3 f = -(q.conjugate() * Gravity{}.g);
    for (int k = 0; k <= 2000; ++k) imu.push_back({0.005 * k, Vec3::Zero(), f});
  }

  NavState state(double t) const {
    NavState x;
    x.t = t;
    x.p = Vec3(1.0, 2.0, -1.0) + v * t;
    x.q = q;
    x.v = v;
    return x;
  }

  /// `keyframes` entries 0.5 s apart; `points` associations per (source,
  /// target) pair, skipping targets listed in `skip_targets`.
  Window window(std::size_t keyframes, std::size_t points, std::uint64_t seed,
                const std::vector<std::size_t>& skip_targets = {}) const {
    Window w;
    w.ext = ext;
    for (std::size_t k = 0; k < keyframes; ++k) {
      WindowEntry e;
      e.id = 100 + k;
      e.state = state(0.5 * static_cast<double>(k));
      e.stamp = e.state.t;
      if (k > 0) {
        const auto samples = imu_interval(imu, w.entries.back().state.t, e.state.t);
        e.pre = std::make_shared<Preintegration>(preintegrate(samples, Vec3::Zero(), Vec3::Zero(), ImuNoise{}));
      }
      w.entries.push_back(std::move(e));
    }
    w.prior = state_prior(w.entries.front().id, w.entries.front().state, default_sigma());
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const Pose T_rb = ext.pose();
    for (std::size_t s = 1; s < keyframes; ++s) {
      const Pose T_wn = w.entries[s].state.pose() * T_rb;
      for (std::size_t i = 0; i < s; ++i) {
        if (std::find(skip_targets.begin(), skip_targets.end(), i) != skip_targets.end()) continue;
        const Pose T_wi = w.entries[i].state.pose() * T_rb;
        for (std::size_t k = 0; k < points; ++k) {
          PlaneAssociation a;
          a.p_r = Vec3(5.0 + 3.0 * u(rng), 4.0 * u(rng), 2.0 * u(rng));
          a.source = s;
          a.target = i;
          const Vec3 pi = T_wi.inverse().transform(T_wn.transform(a.p_r));
          a.plane.n = Vec3(u(rng), u(rng), u(rng)).normalized();
          a.plane.d = -a.plane.n.dot(pi);
          a.source_index = k;
          w.associations.push_back(a);
        }
      }
    }
    w.injected.assign(w.associations.size(), false);
    return w;
  }
};

double max_state_change(const Window& a, const Window& b) {
  double worst = 0.0;
  for (std::size_t k = 0; k < a.entries.size(); ++k) {
    const NavState &x = a.entries[k].state, &y = b.entries[k].state;
    worst = std::max({worst, (x.p - y.p).norm(), quat_log(x.q.conjugate() * y.q).norm(), (x.v - y.v).norm(),
                      (x.bg - y.bg).norm(), (x.ba - y.ba).norm()});
  }
  return worst;
}

}  // namespace

TEST_CASE("keyframe policy boundary table") {
  const double deg = kDegToRad;
  struct Row {
    double translation, rotation, elapsed;
    bool expected;
  };
  const Row rows[] = {
      {0.5, 2.0 * deg, 0.2, true},   {0.1, 5.0 * deg, 0.2, false}, {0.0, 0.0, 0.6, true},
      {0.4, 0.0, 0.0, false},        {0.4 + 1e-9, 0.0, 0.0, true}, {0.0, 10.0 * deg, 0.0, false},
      {0.0, 10.0 * deg + 1e-9, 0.0, true}, {0.0, 0.0, 0.5, true},  {0.0, 0.0, 0.5 - 1e-9, false},
      {0.39, 9.9 * deg, 0.49, false},
  };
  for (const auto& r : rows) {
    CAPTURE(r.translation);
    CAPTURE(r.rotation);
    CAPTURE(r.elapsed);
    CHECK(select_keyframe(r.translation, r.rotation, r.elapsed) == r.expected);
  }
  const KeyframePolicy p;
  CHECK(p.translation == 0.4);
  CHECK(p.rotation == doctest::Approx(10.0 * kDegToRad).epsilon(1e-15));
  CHECK(p.interval == 0.5);
  CHECK(kWindowSize == 10u);
  CHECK(kChiSquare95 == 3.841);
  CHECK(EstimatorOptions{}.window_size == 10u);
}

TEST_CASE("exact window is a fixed point") {
  const LinearScene scene;
  Window w = scene.window(6, 20, 1);
  const Window before = w;
  const OptimizationReport r = optimize_window(w, EstimatorOptions{});
  CHECK(r.culled == 0);
  CHECK(r.step2.final_cost < 1e-18);
  CHECK(max_state_change(w, before) < 1e-9);
  CHECK(r.whitened_rms < 1e-8);
}

TEST_CASE("perturbed window converges back to the exact states") {
  const LinearScene scene;
  Window w = scene.window(6, 20, 2);
  const Window truth = w;
  for (std::size_t k = 1; k < w.entries.size(); ++k) {
    w.entries[k].state.p += Vec3(0.05, -0.03, 0.02);
    w.entries[k].state.q = w.entries[k].state.q * quat_exp(Vec3(0.01, -0.005, 0.02));
    w.entries[k].state.v += Vec3(0.02, 0.01, 0.0);
  }
  optimize_window(w, EstimatorOptions{});
  CHECK(max_state_change(w, truth) < 1e-6);
}

TEST_CASE("wrong-plane associations are culled") {
  const LinearScene scene;
  Window w = scene.window(6, 20, 3);
  const Window truth = w;
  std::size_t injected = 0;
  for (std::size_t k = 0; k < w.associations.size(); k += 10) {
    w.associations[k].plane.d += 1.0;
    w.injected[k] = true;
    ++injected;
  }
  const OptimizationReport r = optimize_window(w, EstimatorOptions{});
  CHECK(r.injected == injected);
  CHECK(r.injected_culled == injected);
  CHECK(r.culled == injected);
  CHECK(max_state_change(w, truth) < 1e-6);
}

TEST_CASE("culling is idempotent on noiseless simulator data") {
  ScenarioOptions opt;
  opt.noise = false;
  opt.duration = 12.0;
  const Scenario sc = make_scenario("room-orbit", 5, opt);
  simwin::TruthWindowSpec spec;
  spec.keyframes = 6;
  spec.max_source_points = 80;
  Window w = simwin::truth_window(sc, spec);
  const OptimizationReport r = optimize_window(w, EstimatorOptions{});
  REQUIRE(r.associations > 100);
  // Gate the survivors again at the step-2 solution.
  const WindowProblem wp = build_window_problem(w, Gravity{}, false);
  std::size_t again = 0;
  for (std::size_t k = 0; k < wp.lidar.size(); ++k) {
    if (!r.kept[k]) continue;
    const double e = wp.problem.evaluate_residual(wp.lidar[k])(0);
    if (e * e > kChiSquare95) ++again;
  }
  CHECK(again == 0);
}

TEST_CASE("single keyframe window keeps the propagated state") {
  const LinearScene scene;
  Window w = scene.window(1, 0, 4);
  const Window before = w;
  const OptimizationReport r = optimize_window(w, EstimatorOptions{});
  CHECK(r.associations == 0);
  CHECK(max_state_change(w, before) < 1e-12);
  REQUIRE(r.attitude.has_value());
}

TEST_CASE("prior-only attitude STD equals the prior") {
  NavState x;
  x.q = Quat(Eigen::AngleAxisd(1.1, Vec3::UnitZ()));
  Window w;
  WindowEntry e;
  e.id = 7;
  e.state = x;
  w.entries.push_back(e);
  Eigen::Matrix<double, 15, 1> sigma = default_sigma();
  sigma.segment<3>(3) = Vec3(0.3, 0.4, 0.7) * kDegToRad;
  w.prior = state_prior(7, x, sigma);
  const WindowProblem wp = build_window_problem(w, Gravity{}, false);
  const AttitudeStd s = attitude_std(wp.problem, w);
  CHECK(s.roll == doctest::Approx(0.3).epsilon(1e-9));
  CHECK(s.pitch == doctest::Approx(0.4).epsilon(1e-9));
  CHECK(s.yaw == doctest::Approx(0.7).epsilon(1e-9));
}

TEST_CASE("heading-frame attitude STD rotates with the body") {
  // Body rolled by 90 deg: body y is world z, so body-y variance is yaw.
  const Quat q(Eigen::AngleAxisd(kPi / 2, Vec3::UnitX()));
  const Mat3 cov = Vec3(1e-4, 4e-4, 9e-4).asDiagonal();
  const AttitudeStd s = attitude_std_from_covariance(cov, q);
  CHECK(s.roll == doctest::Approx(1e-2 * kRadToDeg));
  CHECK(s.yaw == doctest::Approx(2e-2 * kRadToDeg));
  CHECK(s.pitch == doctest::Approx(3e-2 * kRadToDeg));
}

TEST_CASE("marginalizing a keyframe without LiDAR factors keeps IMU and prior only") {
  const LinearScene scene;
  Window w = scene.window(5, 10, 6, {0});
  const std::vector<BlockKey> drop{state_key(100, 0), state_key(100, 1), state_key(100, 2), state_key(100, 3),
                                   state_key(100, 4)};
  // Oracle: only the first preintegration factor and the prior.
  nlls::Problem oracle;
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& x = w.entries[k].state;
    oracle.add_block(state_key(w.entries[k].id, 0), values3(x.p), Manifold::kEuclidean);
    oracle.add_block(state_key(w.entries[k].id, 1), values4(x.q), Manifold::kQuaternion);
    oracle.add_block(state_key(w.entries[k].id, 2), values3(x.v), Manifold::kEuclidean);
    oracle.add_block(state_key(w.entries[k].id, 3), values3(x.bg), Manifold::kEuclidean);
    oracle.add_block(state_key(w.entries[k].id, 4), values3(x.ba), Manifold::kEuclidean);
  }
  std::vector<BlockKey> blocks;
  for (std::size_t k = 0; k < 2; ++k)
    for (int c = 0; c < 5; ++c) blocks.push_back(state_key(w.entries[k].id, c));
  oracle.add_residual(std::make_shared<PreintegrationFactor>(w.entries[1].pre, Gravity{}), blocks);
  oracle.set_prior(w.prior);
  const nlls::PriorFactor expected = nlls::marginalize(oracle, drop);

  marginalize_and_slide(w, Gravity{}, {});
  REQUIRE(w.entries.size() == 4);
  REQUIRE(w.prior.keys == expected.keys);
  const Eigen::MatrixXd a = w.prior.information(), b = expected.information();
  CHECK((a - b).norm() < 1e-8 * b.norm());
  for (const auto& assoc : w.associations) CHECK(assoc.target < assoc.source);
}

TEST_CASE("sliding keeps the marginal covariance of the remaining states") {
  // At a zero-residual point the Schur complement is exact, so the reduced
  // window must reproduce the full window's marginal covariance.
  const LinearScene scene;
  Window w = scene.window(6, 15, 7);
  const WindowProblem full = build_window_problem(w, Gravity{}, false);
  std::vector<BlockKey> keys;
  for (std::size_t k = 1; k < w.entries.size(); ++k)
    for (int c = 0; c < 5; ++c) keys.push_back(state_key(w.entries[k].id, c));
  const Eigen::MatrixXd cov_full = nlls::marginal_covariance(full.problem, keys);

  marginalize_and_slide(w, Gravity{}, {});
  const WindowProblem reduced = build_window_problem(w, Gravity{}, false);
  const Eigen::MatrixXd cov_reduced = nlls::marginal_covariance(reduced.problem, keys);
  CHECK((cov_full - cov_reduced).norm() < 1e-8 * cov_full.norm());

  // The reduced window stays at the same optimum.
  const Window before = w;
  optimize_window(w, EstimatorOptions{});
  CHECK(max_state_change(w, before) < 1e-8);
}

TEST_CASE("degenerate normals freeze the calibration") {
  const LinearScene scene;
  Window w = scene.window(5, 10, 8);
  for (auto& a : w.associations) {
    // Every plane faces the same world direction.
    const Pose T_wi = w.entries[a.target].state.pose() * w.ext.pose();
    const Pose T_wn = w.entries[a.source].state.pose() * w.ext.pose();
    const Vec3 pi = T_wi.inverse().transform(T_wn.transform(a.p_r));
    a.plane.n = T_wi.q.conjugate() * Vec3::UnitZ();
    a.plane.d = -a.plane.n.dot(pi);
  }
  w.calibrate = true;
  CHECK(normal_spread(w) < 1e-12);
  const Extrinsics ext = w.ext;
  const OptimizationReport r = optimize_window(w, EstimatorOptions{});
  CHECK(r.degenerate);
  CHECK_FALSE(r.calibration_free);
  CHECK(w.ext.p == ext.p);
}

TEST_CASE("estimator frame contract and end-to-end drift") {
  ScenarioOptions opt;
  opt.duration = 20.0;
  const Scenario sc = make_scenario("room-orbit", 9, opt);
  EstimatorOptions eo;
  Estimator est(eo);
  std::size_t next = 0;
  bool saw_first = false, saw_non_keyframe = false;
  std::vector<TrajectoryRecord> traj;
  for (const auto& sf : sc.lidar) {
    while (next < sc.imu.samples.size() && sc.imu.samples[next].t <= sf.frame.stamp + 0.15)
      est.add_imu(sc.imu.samples[next++]);
    FrameOutput out;
    try {
      out = est.process_frame(sf.frame);
    } catch (const FrameSkipped&) {
      CHECK_FALSE(est.initialized());
      continue;
    }
    traj.push_back({out.t, out.pose});
    if (!saw_first) {
      // First keyframe after initialization: no LiDAR factors yet.
      REQUIRE(out.keyframe);
      CHECK(out.report->associations == 0);
      CHECK(est.window().entries.size() == 1);
      saw_first = true;
      continue;
    }
    if (!out.keyframe) {
      const Pose ins = est.ins().pose(out.t);
      CHECK((out.pose.p - ins.p).norm() == 0.0);
      CHECK(out.pose.q.angularDistance(ins.q) == 0.0);
      CHECK_FALSE(out.report.has_value());
      saw_non_keyframe = true;
      continue;
    }
    CHECK(est.window().entries.size() <= kWindowSize + 1);
    const auto& prior = est.window().prior;
    if (!prior.empty()) {
      const Eigen::MatrixXd info = prior.information();
      const double lo = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(info).eigenvalues()(0);
      CHECK(lo >= -1e-9 * info.diagonal().maxCoeff());
    }
    for (const auto& a : est.window().associations) CHECK(a.target < a.source);
    if (out.report->attitude) {
      CHECK(out.report->attitude->roll >= 0.0);
      CHECK(out.report->attitude->yaw >= 0.0);
    }
  }
  CHECK(saw_first);
  CHECK(saw_non_keyframe);
  const auto m = evaluate(traj, truth_trajectory(sc));
  MESSAGE("room-orbit 20 s ATE " << m.ate << " m over " << sc.distance() << " m");
  CHECK(m.ate < 0.005 * sc.distance());
}
