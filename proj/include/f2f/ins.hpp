#pragma once

// Strapdown INS for a front-right-down IMU in a gravity-aligned, z-down
// world frame: initialization, mechanization, the high-rate pose buffer and
// IMU preintegration between keyframes.

#include <span>
#include <vector>

#include <Eigen/Core>

#include "f2f/se3.hpp"

namespace f2f {

inline constexpr double kStandardGravity = 9.80665;

using Vec15 = Eigen::Matrix<double, 15, 1>;
using Mat15 = Eigen::Matrix<double, 15, 15>;

struct ImuSample {
  double t = 0.0;
  Vec3 gyro = Vec3::Zero();   // rad/s
  Vec3 accel = Vec3::Zero();  // specific force, m/s^2
};

struct NavState {
  double t = 0.0;
  Vec3 p = Vec3::Zero();
  Quat q = Quat::Identity();
  Vec3 v = Vec3::Zero();
  Vec3 bg = Vec3::Zero();
  Vec3 ba = Vec3::Zero();

  Pose pose() const { return {p, q}; }
};

struct Gravity {
  /// World frame is z-down, so gravity points along +z.
  Vec3 g{0.0, 0.0, kStandardGravity};
};

/// Continuous-time noise densities.
struct ImuNoise {
  double gyro_noise = 2.9e-5;   // rad/s/sqrt(Hz)   (~0.1 deg/sqrt(h))
  double accel_noise = 1.7e-4;  // m/s^2/sqrt(Hz)   (~0.01 m/s/sqrt(h))
  double gyro_walk = 1.0e-6;    // rad/s^2/sqrt(Hz)
  double accel_walk = 1.0e-4;   // m/s^3/sqrt(Hz)
};

struct BiasLimits {
  double gyro = 0.1;  // rad/s
  double accel = 2.0;  // m/s^2
};

// ---------------------------------------------------------------------------
// Initialization

struct Leveling {
  double roll = 0.0;
  double pitch = 0.0;
};

/// Roll and pitch from the mean specific force of a near-static window.
/// Throws std::invalid_argument for fewer than 20 samples and f2f::Error when
/// the mean magnitude deviates from |g| by more than 10 %.
Leveling init_attitude_from_accel(std::span<const ImuSample> samples,
                                  double gravity_magnitude = kStandardGravity);

struct ZeroVelocityThresholds {
  double gyro_std = 0.005;   // rad/s
  double accel_std = 0.05;   // m/s^2
  double gyro_mean = 0.02;   // rad/s, gate on |mean angular rate|
  double min_span = 1.0;     // s
};

/// True iff the window is long enough and both sensors are quiet. The standard
/// deviation gate is applied to each axis.
bool detect_zero_velocity(std::span<const ImuSample> window,
                          const ZeroVelocityThresholds& thresholds = {});

/// Mean angular rate of a static window. Throws f2f::Error when the window is
/// not static.
Vec3 estimate_gyro_bias_static(std::span<const ImuSample> window,
                               const ZeroVelocityThresholds& thresholds = {});

// ---------------------------------------------------------------------------
// Mechanization

/// Linear interpolation of a sample pair at t.
ImuSample interpolate_imu(const ImuSample& a, const ImuSample& b, double t);

/// Propagates `state` (at s0.t) to s1.t. Midpoint angular increment for the
/// attitude, trapezoidal specific force for velocity, trapezoidal velocity for
/// position.
NavState mechanize_step(const NavState& state, const ImuSample& s0, const ImuSample& s1,
                        const Gravity& gravity);

/// Samples covering exactly [t0, t1], with interpolated endpoints.
/// Throws f2f::Error when the stream does not span the interval.
std::vector<ImuSample> imu_interval(std::span<const ImuSample> stream, double t0, double t1);

/// Time-ordered NavState snapshots at IMU rate.
class InsPoseBuffer {
 public:
  /// Appends a snapshot; its time must exceed the last one.
  void push(const NavState& state);
  void clear() { states_.clear(); }
  /// Drops snapshots strictly after t.
  void truncate_after(double t);
  /// Drops snapshots that are not needed to answer queries at or after t.
  void prune_before(double t);

  bool empty() const { return states_.empty(); }
  std::size_t size() const { return states_.size(); }
  double front_time() const;
  double back_time() const;
  const NavState& back() const { return states_.back(); }

  bool covers(double t) const;
  bool covers(double t0, double t1) const { return covers(t0) && covers(t1); }

  /// Interpolated state; throws f2f::Error outside the buffered span.
  NavState query(double t) const;
  Pose pose(double t) const { return query(t).pose(); }
  /// Body angular rate around t from neighbouring attitudes.
  Vec3 angular_rate(double t) const;

 private:
  std::size_t upper_index(double t) const;
  std::vector<NavState> states_;
};

// ---------------------------------------------------------------------------
// Preintegration

/// Relative-motion deltas between two keyframes. Error-state order is
/// (dp, dphi, dv, dbg, dba). Deltas carry no gravity; it enters the residual.
class Preintegration {
 public:
  double t0() const { return t0_; }
  double t1() const { return t1_; }
  double dt() const { return t1_ - t0_; }
  const Vec3& dp() const { return dp_; }
  const Vec3& dv() const { return dv_; }
  const Quat& dq() const { return dq_; }
  const Mat15& covariance() const { return covariance_; }
  /// Upper-triangular S with S^T S = covariance^-1.
  const Mat15& sqrt_information() const { return sqrt_info_; }

  const Vec3& bg0() const { return bg0_; }
  const Vec3& ba0() const { return ba0_; }
  const Mat3& dp_dbg() const { return dp_dbg_; }
  const Mat3& dp_dba() const { return dp_dba_; }
  const Mat3& dv_dbg() const { return dv_dbg_; }
  const Mat3& dv_dba() const { return dv_dba_; }
  const Mat3& dq_dbg() const { return dq_dbg_; }

  /// First-order bias-corrected deltas.
  Vec3 corrected_dp(const Vec3& bg, const Vec3& ba) const;
  Vec3 corrected_dv(const Vec3& bg, const Vec3& ba) const;
  Quat corrected_dq(const Vec3& bg) const;

  /// Propagates x_i through the bias-corrected deltas.
  NavState predict(const NavState& xi, const Gravity& gravity) const;

  const std::vector<ImuSample>& samples() const { return samples_; }
  const ImuNoise& noise() const { return noise_; }

  /// Re-integrates the stored samples around new linearization biases.
  Preintegration repropagated(const Vec3& bg, const Vec3& ba) const;

 private:
  friend class PreintegrationBuilder;
  double t0_ = 0.0, t1_ = 0.0;
  Vec3 dp_ = Vec3::Zero(), dv_ = Vec3::Zero();
  Quat dq_ = Quat::Identity();
  Mat15 covariance_ = Mat15::Zero();
  Mat15 sqrt_info_ = Mat15::Identity();
  Vec3 bg0_ = Vec3::Zero(), ba0_ = Vec3::Zero();
  Mat3 dp_dbg_ = Mat3::Zero(), dp_dba_ = Mat3::Zero();
  Mat3 dv_dbg_ = Mat3::Zero(), dv_dba_ = Mat3::Zero();
  Mat3 dq_dbg_ = Mat3::Zero();
  std::vector<ImuSample> samples_;
  ImuNoise noise_;
};

/// Incremental construction; the finished Preintegration is immutable.
class PreintegrationBuilder {
 public:
  PreintegrationBuilder(const Vec3& bg0, const Vec3& ba0, const ImuNoise& noise);

  /// Adds the next sample; timestamps must be strictly increasing.
  void add(const ImuSample& sample);
  std::size_t sample_count() const { return p_.samples_.size(); }
  const Mat15& covariance() const { return p_.covariance_; }

  /// Throws std::invalid_argument with fewer than two samples.
  Preintegration finish() const;

 private:
  Preintegration p_;
};

/// Convenience: builds from a sample list (>= 2 samples).
Preintegration preintegrate(std::span<const ImuSample> samples, const Vec3& bg0, const Vec3& ba0,
                            const ImuNoise& noise);

/// Jacobians of the (unwhitened) residual w.r.t. the tangent of x_i and x_j,
/// columns ordered (dp, dphi, dv, dbg, dba).
struct PreintegrationJacobians {
  Mat15 d_xi = Mat15::Zero();
  Mat15 d_xj = Mat15::Zero();
};

/// 15-vector residual (position, attitude, velocity, gyro bias, accel bias).
/// Throws f2f::Error when x_i.t + dt != x_j.t (1e-6 s).
Vec15 preintegration_residual(const NavState& xi, const NavState& xj, const Preintegration& pre,
                              const Gravity& gravity, PreintegrationJacobians* jacobians = nullptr);

}  // namespace f2f
