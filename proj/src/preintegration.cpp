#include <cmath>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "f2f/error.hpp"
#include "f2f/ins.hpp"

namespace f2f {

namespace {

// Block offsets in the 15-dim error state.
constexpr int kP = 0;
constexpr int kR = 3;
constexpr int kV = 6;
constexpr int kBg = 9;
constexpr int kBa = 12;

Mat15 sqrt_information_of(const Mat15& cov) {
  const Mat15 sym = 0.5 * (cov + cov.transpose());
  Eigen::LLT<Mat15> llt_cov(sym);
  if (llt_cov.info() == Eigen::Success) {
    const Mat15 info = llt_cov.solve(Mat15::Identity());
    Eigen::LLT<Mat15> llt_info(0.5 * (info + info.transpose()));
    if (llt_info.info() == Eigen::Success) return llt_info.matrixU();
  }
  // Degenerate covariance: pseudo-inverse square root.
  Eigen::SelfAdjointEigenSolver<Mat15> es(sym);
  const double floor = std::max(es.eigenvalues().maxCoeff(), 1e-300) * 1e-14;
  Eigen::Matrix<double, 15, 1> s;
  for (int k = 0; k < 15; ++k) {
    const double ev = es.eigenvalues()(k);
    s(k) = ev > floor ? 1.0 / std::sqrt(ev) : 0.0;
  }
  return s.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

PreintegrationBuilder::PreintegrationBuilder(const Vec3& bg0, const Vec3& ba0,
                                             const ImuNoise& noise) {
  p_.bg0_ = bg0;
  p_.ba0_ = ba0;
  p_.noise_ = noise;
}

void PreintegrationBuilder::add(const ImuSample& sample) {
  auto& s = p_.samples_;
  if (s.empty()) {
    s.push_back(sample);
    p_.t0_ = p_.t1_ = sample.t;
    return;
  }
  const ImuSample& s0 = s.back();
  const double dt = sample.t - s0.t;
  if (!(dt > 0.0)) throw Error("PreintegrationBuilder: timestamps must be strictly increasing");

  const Vec3 w = 0.5 * (s0.gyro + sample.gyro) - p_.bg0_;
  const Vec3 f0 = s0.accel - p_.ba0_;
  const Vec3 f1 = sample.accel - p_.ba0_;
  const Vec3 dtheta = w * dt;

  const Mat3 R0 = p_.dq_.toRotationMatrix();
  const Quat dq1 = quat_mul(p_.dq_, quat_exp(dtheta));
  const Mat3 R1 = dq1.toRotationMatrix();
  const Mat3 A = exp_so3(dtheta).transpose();
  const Mat3 Jr = right_jacobian(dtheta);
  const Mat3 B = -Jr * dt;

  const Vec3 a = 0.5 * (R0 * f0 + R1 * f1);

  // Sensitivities of the midpoint acceleration.
  const Mat3 R0f0x = R0 * skew(f0);
  const Mat3 R1f1x = R1 * skew(f1);
  const Mat3 a_phi = -0.5 * (R0f0x + R1f1x * A);
  const Mat3 a_bg = -0.5 * R1f1x * B;
  const Mat3 a_ba = -0.5 * (R0 + R1);

  Mat15 F = Mat15::Identity();
  const double hdt2 = 0.5 * dt * dt;
  F.block<3, 3>(kP, kR) = hdt2 * a_phi;
  F.block<3, 3>(kP, kV) = dt * Mat3::Identity();
  F.block<3, 3>(kP, kBg) = hdt2 * a_bg;
  F.block<3, 3>(kP, kBa) = hdt2 * a_ba;
  F.block<3, 3>(kR, kR) = A;
  F.block<3, 3>(kR, kBg) = B;
  F.block<3, 3>(kV, kR) = dt * a_phi;
  F.block<3, 3>(kV, kBg) = dt * a_bg;
  F.block<3, 3>(kV, kBa) = dt * a_ba;

  // Gyro and accelerometer white noise enter through the same paths as the
  // bias errors; bias random walks are additive.
  Eigen::Matrix<double, 15, 3> Gg = Eigen::Matrix<double, 15, 3>::Zero();
  Gg.block<3, 3>(kP, 0) = -hdt2 * a_bg;
  Gg.block<3, 3>(kR, 0) = -B;
  Gg.block<3, 3>(kV, 0) = -dt * a_bg;
  Eigen::Matrix<double, 15, 3> Ga = Eigen::Matrix<double, 15, 3>::Zero();
  Ga.block<3, 3>(kP, 0) = -hdt2 * a_ba;
  Ga.block<3, 3>(kV, 0) = -dt * a_ba;

  const auto& n = p_.noise_;
  Mat15 cov = F * p_.covariance_ * F.transpose();
  cov += (n.gyro_noise * n.gyro_noise / dt) * Gg * Gg.transpose();
  cov += (n.accel_noise * n.accel_noise / dt) * Ga * Ga.transpose();
  cov.block<3, 3>(kBg, kBg) += n.gyro_walk * n.gyro_walk * dt * Mat3::Identity();
  cov.block<3, 3>(kBa, kBa) += n.accel_walk * n.accel_walk * dt * Mat3::Identity();
  p_.covariance_ = 0.5 * (cov + cov.transpose());

  // Bias Jacobians follow the same linearization as F.
  const Mat3 dq_dbg1 = A * p_.dq_dbg_ + B;
  const Mat3 da_dbg = -0.5 * (R0f0x * p_.dq_dbg_ + R1f1x * dq_dbg1);
  p_.dp_dbg_ += p_.dv_dbg_ * dt + hdt2 * da_dbg;
  p_.dp_dba_ += p_.dv_dba_ * dt + hdt2 * a_ba;
  p_.dv_dbg_ += dt * da_dbg;
  p_.dv_dba_ += dt * a_ba;
  p_.dq_dbg_ = dq_dbg1;

  p_.dp_ += p_.dv_ * dt + hdt2 * a;
  p_.dv_ += a * dt;
  p_.dq_ = dq1;
  p_.t1_ = sample.t;
  s.push_back(sample);
}

Preintegration PreintegrationBuilder::finish() const {
  if (p_.samples_.size() < 2) throw std::invalid_argument("preintegration needs at least two samples");
  Preintegration out = p_;
  out.sqrt_info_ = sqrt_information_of(out.covariance_);
  return out;
}

Preintegration preintegrate(std::span<const ImuSample> samples, const Vec3& bg0, const Vec3& ba0,
                            const ImuNoise& noise) {
  if (samples.size() < 2) throw std::invalid_argument("preintegration needs at least two samples");
  PreintegrationBuilder builder(bg0, ba0, noise);
  for (const auto& s : samples) builder.add(s);
  return builder.finish();
}

Preintegration Preintegration::repropagated(const Vec3& bg, const Vec3& ba) const {
  return preintegrate(samples_, bg, ba, noise_);
}

Vec3 Preintegration::corrected_dp(const Vec3& bg, const Vec3& ba) const {
  return dp_ + dp_dbg_ * (bg - bg0_) + dp_dba_ * (ba - ba0_);
}

Vec3 Preintegration::corrected_dv(const Vec3& bg, const Vec3& ba) const {
  return dv_ + dv_dbg_ * (bg - bg0_) + dv_dba_ * (ba - ba0_);
}

Quat Preintegration::corrected_dq(const Vec3& bg) const {
  return quat_mul(dq_, quat_exp(dq_dbg_ * (bg - bg0_)));
}

NavState Preintegration::predict(const NavState& xi, const Gravity& gravity) const {
  const double T = dt();
  NavState xj = xi;
  xj.t = xi.t + T;
  xj.q = quat_mul(xi.q, corrected_dq(xi.bg));
  xj.v = xi.v + gravity.g * T + xi.q * corrected_dv(xi.bg, xi.ba);
  xj.p = xi.p + xi.v * T + 0.5 * gravity.g * T * T + xi.q * corrected_dp(xi.bg, xi.ba);
  return xj;
}

Vec15 preintegration_residual(const NavState& xi, const NavState& xj, const Preintegration& pre,
                              const Gravity& gravity, PreintegrationJacobians* jacobians) {
  const double T = pre.dt();
  if (std::abs(xi.t + T - xj.t) > 1e-6) {
    throw Error("preintegration_residual: state timestamps do not match the interval");
  }
  const Mat3 Ri_t = xi.q.toRotationMatrix().transpose();
  const Vec3 dbg = xi.bg - pre.bg0();
  const Vec3 dpos = xj.p - xi.p - xi.v * T - 0.5 * gravity.g * T * T;
  const Vec3 dvel = xj.v - xi.v - gravity.g * T;
  const Quat dq_c = pre.corrected_dq(xi.bg);
  const Quat E = (dq_c.conjugate() * xi.q.conjugate() * xj.q).normalized();

  Vec15 r;
  r.segment<3>(kP) = Ri_t * dpos - pre.corrected_dp(xi.bg, xi.ba);
  r.segment<3>(kR) = quat_log(E);
  r.segment<3>(kV) = Ri_t * dvel - pre.corrected_dv(xi.bg, xi.ba);
  r.segment<3>(kBg) = xj.bg - xi.bg;
  r.segment<3>(kBa) = xj.ba - xi.ba;

  if (jacobians != nullptr) {
    Mat15& Ji = jacobians->d_xi;
    Mat15& Jj = jacobians->d_xj;
    Ji.setZero();
    Jj.setZero();
    const Mat3 I = Mat3::Identity();
    const Mat3 Jr_inv = right_jacobian_inv(r.segment<3>(kR));

    Ji.block<3, 3>(kP, kP) = -Ri_t;
    Ji.block<3, 3>(kP, kR) = skew(Ri_t * dpos);
    Ji.block<3, 3>(kP, kV) = -Ri_t * T;
    Ji.block<3, 3>(kP, kBg) = -pre.dp_dbg();
    Ji.block<3, 3>(kP, kBa) = -pre.dp_dba();
    Jj.block<3, 3>(kP, kP) = Ri_t;

    Ji.block<3, 3>(kR, kR) = -Jr_inv * (xj.q.conjugate() * xi.q).toRotationMatrix();
    Ji.block<3, 3>(kR, kBg) = -Jr_inv * E.toRotationMatrix().transpose() *
                              right_jacobian(pre.dq_dbg() * dbg) * pre.dq_dbg();
    Jj.block<3, 3>(kR, kR) = Jr_inv;

    Ji.block<3, 3>(kV, kR) = skew(Ri_t * dvel);
    Ji.block<3, 3>(kV, kV) = -Ri_t;
    Ji.block<3, 3>(kV, kBg) = -pre.dv_dbg();
    Ji.block<3, 3>(kV, kBa) = -pre.dv_dba();
    Jj.block<3, 3>(kV, kV) = Ri_t;

    Ji.block<3, 3>(kBg, kBg) = -I;
    Jj.block<3, 3>(kBg, kBg) = I;
    Ji.block<3, 3>(kBa, kBa) = -I;
    Jj.block<3, 3>(kBa, kBa) = I;
  }
  return r;
}

}  // namespace f2f
