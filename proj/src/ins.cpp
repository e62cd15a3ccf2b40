#include "f2f/ins.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "f2f/error.hpp"

namespace f2f {

namespace {

struct SampleStats {
  Vec3 gyro_mean = Vec3::Zero();
  Vec3 accel_mean = Vec3::Zero();
  Vec3 gyro_std = Vec3::Zero();
  Vec3 accel_std = Vec3::Zero();
};

SampleStats sample_stats(std::span<const ImuSample> samples) {
  SampleStats s;
  const double n = static_cast<double>(samples.size());
  for (const auto& x : samples) {
    s.gyro_mean += x.gyro;
    s.accel_mean += x.accel;
  }
  s.gyro_mean /= n;
  s.accel_mean /= n;
  if (samples.size() < 2) return s;
  Vec3 gv = Vec3::Zero(), av = Vec3::Zero();
  for (const auto& x : samples) {
    gv += (x.gyro - s.gyro_mean).cwiseAbs2();
    av += (x.accel - s.accel_mean).cwiseAbs2();
  }
  s.gyro_std = (gv / (n - 1.0)).cwiseSqrt();
  s.accel_std = (av / (n - 1.0)).cwiseSqrt();
  return s;
}

}  // namespace

Leveling init_attitude_from_accel(std::span<const ImuSample> samples, double gravity_magnitude) {
  if (samples.size() < 20) {
    throw std::invalid_argument("init_attitude_from_accel: need at least 20 samples");
  }
  const Vec3 f = sample_stats(samples).accel_mean;
  if (std::abs(f.norm() - gravity_magnitude) > 0.1 * gravity_magnitude) {
    throw Error("init_attitude_from_accel: mean specific force magnitude " +
                std::to_string(f.norm()) + " is not close to gravity");
  }
  // At rest f^b = -R^T g^w with g^w = (0, 0, +g).
  Leveling out;
  out.roll = std::atan2(-f.y(), -f.z());
  out.pitch = std::atan2(f.x(), std::hypot(f.y(), f.z()));
  return out;
}

bool detect_zero_velocity(std::span<const ImuSample> window,
                          const ZeroVelocityThresholds& thresholds) {
  if (window.size() < 2) return false;
  if (window.back().t - window.front().t < thresholds.min_span - 1e-9) return false;
  const SampleStats s = sample_stats(window);
  return s.gyro_std.maxCoeff() < thresholds.gyro_std &&
         s.accel_std.maxCoeff() < thresholds.accel_std &&
         s.gyro_mean.norm() < thresholds.gyro_mean;
}

Vec3 estimate_gyro_bias_static(std::span<const ImuSample> window,
                               const ZeroVelocityThresholds& thresholds) {
  if (!detect_zero_velocity(window, thresholds)) {
    throw Error("estimate_gyro_bias_static: window is not static");
  }
  return sample_stats(window).gyro_mean;
}

ImuSample interpolate_imu(const ImuSample& a, const ImuSample& b, double t) {
  if (t == a.t) return a;
  if (t == b.t) return b;
  const double alpha = (t - a.t) / (b.t - a.t);
  ImuSample out;
  out.t = t;
  out.gyro = (1.0 - alpha) * a.gyro + alpha * b.gyro;
  out.accel = (1.0 - alpha) * a.accel + alpha * b.accel;
  return out;
}

NavState mechanize_step(const NavState& state, const ImuSample& s0, const ImuSample& s1,
                        const Gravity& gravity) {
  const double dt = s1.t - s0.t;
  if (!(dt > 0.0)) throw Error("mechanize_step: non-monotone IMU timestamps");
  if (std::abs(s0.t - state.t) > 1e-9) throw Error("mechanize_step: state time does not match s0");

  const Vec3 w = 0.5 * (s0.gyro + s1.gyro) - state.bg;
  const Vec3 f0 = s0.accel - state.ba;
  const Vec3 f1 = s1.accel - state.ba;

  NavState out = state;
  out.t = s1.t;
  out.q = quat_mul(state.q, quat_exp(w * dt));
  const Vec3 a = 0.5 * (state.q * f0 + out.q * f1) + gravity.g;
  out.v = state.v + a * dt;
  out.p = state.p + 0.5 * (state.v + out.v) * dt;
  return out;
}

std::vector<ImuSample> imu_interval(std::span<const ImuSample> stream, double t0, double t1) {
  if (!(t1 > t0)) throw Error("imu_interval: empty interval");
  if (stream.empty() || stream.front().t > t0 || stream.back().t < t1) {
    throw Error("imu_interval: IMU stream does not cover the interval");
  }
  auto first = std::upper_bound(stream.begin(), stream.end(), t0,
                                [](double t, const ImuSample& s) { return t < s.t; });
  // first: first sample with t > t0; previous one has t <= t0
  std::vector<ImuSample> out;
  const auto& before = *(first - 1);
  out.push_back(before.t == t0 ? before : interpolate_imu(before, *first, t0));
  auto it = first;
  for (; it != stream.end() && it->t < t1; ++it) out.push_back(*it);
  if (it == stream.end()) {
    if (stream.back().t == t1) out.push_back(stream.back());
  } else if (it->t == t1) {
    out.push_back(*it);
  } else {
    out.push_back(interpolate_imu(*(it - 1), *it, t1));
  }
  return out;
}

// ---------------------------------------------------------------------------

void InsPoseBuffer::push(const NavState& state) {
  if (!states_.empty() && !(state.t > states_.back().t)) {
    throw Error("InsPoseBuffer: timestamps must be strictly increasing");
  }
  states_.push_back(state);
}

void InsPoseBuffer::truncate_after(double t) {
  while (!states_.empty() && states_.back().t > t) states_.pop_back();
}

void InsPoseBuffer::prune_before(double t) {
  std::size_t keep_from = 0;
  while (keep_from + 1 < states_.size() && states_[keep_from + 1].t <= t) ++keep_from;
  if (keep_from > 0) states_.erase(states_.begin(), states_.begin() + static_cast<long>(keep_from));
}

double InsPoseBuffer::front_time() const {
  if (states_.empty()) throw Error("InsPoseBuffer: empty");
  return states_.front().t;
}

double InsPoseBuffer::back_time() const {
  if (states_.empty()) throw Error("InsPoseBuffer: empty");
  return states_.back().t;
}

bool InsPoseBuffer::covers(double t) const {
  return !states_.empty() && t >= states_.front().t && t <= states_.back().t;
}

std::size_t InsPoseBuffer::upper_index(double t) const {
  auto it = std::upper_bound(states_.begin(), states_.end(), t,
                             [](double x, const NavState& s) { return x < s.t; });
  return static_cast<std::size_t>(it - states_.begin());
}

NavState InsPoseBuffer::query(double t) const {
  if (!covers(t)) throw Error("InsPoseBuffer: query time outside buffered span");
  const std::size_t j = upper_index(t);
  if (j == states_.size()) return states_.back();
  const NavState& a = states_[j - 1];
  const NavState& b = states_[j];
  if (t == a.t) return a;
  const double alpha = (t - a.t) / (b.t - a.t);
  NavState out = a;
  out.t = t;
  out.p = (1.0 - alpha) * a.p + alpha * b.p;
  out.v = (1.0 - alpha) * a.v + alpha * b.v;
  out.q = slerp(a.q, b.q, alpha);
  return out;
}

Vec3 InsPoseBuffer::angular_rate(double t) const {
  if (!covers(t) || states_.size() < 2) throw Error("InsPoseBuffer: cannot evaluate angular rate");
  std::size_t j = std::min(upper_index(t), states_.size() - 1);
  if (j == 0) j = 1;
  const NavState& a = states_[j - 1];
  const NavState& b = states_[j];
  return quat_log(a.q.conjugate() * b.q) / (b.t - a.t);
}

}  // namespace f2f
