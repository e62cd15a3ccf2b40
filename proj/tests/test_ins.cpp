#include <random>

#include "doctest.h"
#include "f2f/error.hpp"
#include "f2f/ins.hpp"
#include "oracles.hpp"

using namespace f2f;

namespace {

std::vector<ImuSample> constant_samples(int n, double dt, const Vec3& w, const Vec3& f) {
  std::vector<ImuSample> s;
  for (int k = 0; k < n; ++k) s.push_back({k * dt, w, f});
  return s;
}

}  // namespace

TEST_CASE("init_attitude_from_accel") {
  const double g = kStandardGravity;
  auto lev = init_attitude_from_accel(constant_samples(20, 0.005, Vec3::Zero(), Vec3(0, 0, -g)));
  CHECK(lev.roll == doctest::Approx(0.0));
  CHECK(lev.pitch == doctest::Approx(0.0));

  lev = init_attitude_from_accel(
      constant_samples(50, 0.005, Vec3::Zero(), Vec3(0, g * std::sin(0.1), -g * std::cos(0.1))));
  CHECK(lev.roll == doctest::Approx(-0.1).epsilon(1e-12));
  CHECK(lev.pitch == doctest::Approx(0.0));

  // Leveled attitude maps the mean specific force to -g^w.
  const Vec3 f = Vec3(1.0, -2.0, -9.5).normalized() * g;
  lev = init_attitude_from_accel(constant_samples(30, 0.005, Vec3::Zero(), f));
  const Vec3 fw = euler_to_rotation(lev.roll, lev.pitch, 0.0) * f;
  CHECK((fw - Vec3(0, 0, -g)).norm() < 1e-12);

  CHECK_THROWS_AS(init_attitude_from_accel(constant_samples(30, 0.005, Vec3::Zero(), Vec3(0, 0, -5))), Error);
  CHECK_THROWS_AS(init_attitude_from_accel(constant_samples(19, 0.005, Vec3::Zero(), Vec3(0, 0, -g))),
                  std::invalid_argument);
}

TEST_CASE("detect_zero_velocity") {
  const Vec3 f(0, 0, -kStandardGravity);
  CHECK(detect_zero_velocity(constant_samples(201, 0.005, Vec3::Zero(), f)));

  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  auto noisy = [&](const Vec3& w, double sg, double sa) {
    auto s = constant_samples(401, 0.005, w, f);
    for (auto& x : s) {
      x.gyro += sg * Vec3(n(rng), n(rng), n(rng));
      x.accel += sa * Vec3(n(rng), n(rng), n(rng));
    }
    return s;
  };
  CHECK_FALSE(detect_zero_velocity(noisy(Vec3(0, 0, 0.5), 1e-4, 1e-3)));
  CHECK(detect_zero_velocity(noisy(Vec3::Zero(), 0.0005, 0.005)));
  CHECK_FALSE(detect_zero_velocity(noisy(Vec3::Zero(), 0.02, 0.005)));
  CHECK_FALSE(detect_zero_velocity(noisy(Vec3::Zero(), 0.0005, 0.2)));
  // Shorter than one second.
  CHECK_FALSE(detect_zero_velocity(constant_samples(100, 0.005, Vec3::Zero(), f)));
}

TEST_CASE("estimate_gyro_bias_static") {
  const Vec3 f(0, 0, -kStandardGravity);
  const Vec3 bg = estimate_gyro_bias_static(constant_samples(201, 0.005, Vec3(0.01, 0, 0), f));
  CHECK((bg - Vec3(0.01, 0, 0)).norm() < 1e-15);

  std::mt19937_64 rng(8);
  const double sigma = 0.001;
  std::normal_distribution<double> n(0.0, sigma);
  auto s = constant_samples(1001, 0.005, Vec3::Zero(), f);
  for (auto& x : s) x.gyro = Vec3(n(rng), n(rng), n(rng));
  const Vec3 b = estimate_gyro_bias_static(s);
  CHECK(b.cwiseAbs().maxCoeff() <= 3.0 * sigma / std::sqrt(1001.0));

  CHECK_THROWS_AS(estimate_gyro_bias_static(constant_samples(201, 0.005, Vec3(0, 0, 0.5), f)), Error);
}

TEST_CASE("mechanize_step") {
  const Gravity g;
  NavState x;
  const ImuSample s0{0.0, Vec3::Zero(), Vec3(0, 0, -kStandardGravity)};
  const ImuSample s1{0.005, Vec3::Zero(), Vec3(0, 0, -kStandardGravity)};
  const NavState y = mechanize_step(x, s0, s1, g);
  CHECK(y.p.norm() < 1e-15);
  CHECK(y.v.norm() < 1e-15);
  CHECK(y.q.isApprox(Quat::Identity()));
  CHECK(y.t == 0.005);

  // Constant acceleration from rest.
  auto samples = constant_samples(201, 0.005, Vec3::Zero(), Vec3(1, 0, -kStandardGravity));
  x = NavState{};
  for (std::size_t k = 1; k < samples.size(); ++k) x = mechanize_step(x, samples[k - 1], samples[k], g);
  CHECK((x.v - Vec3(1, 0, 0)).norm() < 1e-6);
  CHECK((x.p - Vec3(0.5, 0, 0)).norm() < 1e-6);

  // Rotation about the gravity axis.
  samples = constant_samples(2001, 0.005, Vec3(0, 0, 0.1), Vec3(0, 0, -kStandardGravity));
  x = NavState{};
  for (std::size_t k = 1; k < samples.size(); ++k) x = mechanize_step(x, samples[k - 1], samples[k], g);
  CHECK((quat_log(x.q) - Vec3(0, 0, 1.0)).norm() < 1e-6);
  CHECK(x.p.norm() < 1e-9);

  CHECK_THROWS_AS(mechanize_step(NavState{}, s1, s0, g), Error);
  NavState off;
  off.t = 1.0;
  CHECK_THROWS_AS(mechanize_step(off, s0, s1, g), Error);
}

TEST_CASE("imu_interval interpolates endpoints") {
  auto s = constant_samples(11, 0.1, Vec3::Zero(), Vec3::Zero());
  for (auto& x : s) x.gyro = Vec3(x.t, 0, 0);
  const auto out = imu_interval(s, 0.15, 0.55);
  CHECK(out.front().t == doctest::Approx(0.15));
  CHECK(out.front().gyro.x() == doctest::Approx(0.15));
  CHECK(out.back().t == doctest::Approx(0.55));
  CHECK(out.size() == 6);
  const auto exact = imu_interval(s, 0.2, 0.4);
  CHECK(exact.size() == 3);
  CHECK_THROWS_AS(imu_interval(s, -0.1, 0.5), Error);
  CHECK_THROWS_AS(imu_interval(s, 0.5, 1.1), Error);
}

TEST_CASE("InsPoseBuffer") {
  InsPoseBuffer buf;
  CHECK_FALSE(buf.covers(0.0));
  NavState a, b;
  a.t = 0.0;
  b.t = 1.0;
  b.p = Vec3(2, 0, 0);
  b.q = quat_exp(Vec3(0, 0, 0.4));
  buf.push(a);
  buf.push(b);
  CHECK_THROWS_AS(buf.push(b), Error);
  const NavState m = buf.query(0.5);
  CHECK((m.p - Vec3(1, 0, 0)).norm() < 1e-15);
  CHECK((quat_log(m.q) - Vec3(0, 0, 0.2)).norm() < 1e-12);
  CHECK((buf.angular_rate(0.5) - Vec3(0, 0, 0.4)).norm() < 1e-12);
  CHECK_THROWS_AS(buf.query(1.5), Error);
  buf.truncate_after(0.5);
  CHECK(buf.size() == 1);
}
