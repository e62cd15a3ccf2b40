#include "f2f/lidar_factor.hpp"

namespace f2f {

namespace {

Quat quat_from(const double* x) { return Quat(x[3], x[0], x[1], x[2]); }

}  // namespace

double lidar_residual(const NavState& xn, const KeyframeEpoch& en, const NavState& xi, const KeyframeEpoch& ei,
                      const Extrinsics& ext, double t_d, const PlaneAssociation& assoc, LidarJacobians* jac) {
  const double dtn = t_d - en.td_lin;
  const double dti = t_d - ei.td_lin;
  const Mat3 Rsn = exp_so3(en.omega * dtn);
  const Mat3 Rsi = exp_so3(ei.omega * dti);
  const Mat3 R_bn = xn.q.toRotationMatrix() * Rsn;
  const Mat3 R_bi = xi.q.toRotationMatrix() * Rsi;
  const Vec3 p_bn = xn.p + xn.v * dtn;
  const Vec3 p_bi = xi.p + xi.v * dti;
  const Mat3 R_rb = ext.q.toRotationMatrix();

  const Vec3 pb_n = R_rb * assoc.p_r + ext.p;
  const Vec3 pw = R_bn * pb_n + p_bn;
  const Vec3 pb_i = R_bi.transpose() * (pw - p_bi);
  const Vec3 pr_i = R_rb.transpose() * (pb_i - ext.p);
  const double w = 1.0 / assoc.sigma;
  const Vec3& n = assoc.plane.n;
  const double r = w * (n.dot(pr_i) + assoc.plane.d);

  if (jac != nullptr) {
    const Row3 nt = w * n.transpose();
    const Mat3 A = R_rb.transpose() * R_bi.transpose();  // world -> LiDAR i
    const Mat3 R_bn_i = A * R_bn;
    // Jacobians w.r.t. the shifted poses.
    const Row3 d_pn = nt * A;
    const Row3 d_phin = -nt * R_bn_i * skew(pb_n);
    const Row3 d_pi = -d_pn;
    const Row3 d_phii = nt * R_rb.transpose() * skew(pb_i);

    jac->p_n = d_pn;
    jac->phi_n = d_phin * Rsn.transpose();
    jac->v_n = d_pn * dtn;
    jac->p_i = d_pi;
    jac->phi_i = d_phii * Rsi.transpose();
    jac->v_i = d_pi * dti;
    const Row3 nt_bn_i = nt * R_bn_i;
    jac->p_ext = nt_bn_i - nt * R_rb.transpose();
    jac->phi_ext = nt * skew(pr_i) - (nt_bn_i * R_rb) * skew(assoc.p_r);
    jac->td = d_pn.dot(xn.v) + (d_phin * right_jacobian(en.omega * dtn) * en.omega)(0) + d_pi.dot(xi.v) +
              (d_phii * right_jacobian(ei.omega * dti) * ei.omega)(0);
  }
  return r;
}

void LidarFactor::evaluate(std::span<const double* const> params, double* residual,
                           std::span<double* const> jacobians) const {
  NavState xn, xi;
  xn.p = Eigen::Map<const Vec3>(params[0]);
  xn.q = quat_from(params[1]);
  xn.v = Eigen::Map<const Vec3>(params[2]);
  xi.p = Eigen::Map<const Vec3>(params[3]);
  xi.q = quat_from(params[4]);
  xi.v = Eigen::Map<const Vec3>(params[5]);
  Extrinsics ext;
  ext.p = Eigen::Map<const Vec3>(params[6]);
  ext.q = quat_from(params[7]);
  const double td = params[8][0];

  bool need = false;
  for (double* j : jacobians) need = need || j != nullptr;
  LidarJacobians J;
  residual[0] = lidar_residual(xn, en_, xi, ei_, ext, td, assoc_, need ? &J : nullptr);
  if (!need) return;
  const Row3* rows[8] = {&J.p_n, &J.phi_n, &J.v_n, &J.p_i, &J.phi_i, &J.v_i, &J.p_ext, &J.phi_ext};
  for (int k = 0; k < 8; ++k) {
    if (jacobians[k] == nullptr) continue;
    for (int c = 0; c < 3; ++c) jacobians[k][c] = (*rows[k])(c);
  }
  if (jacobians[8] != nullptr) jacobians[8][0] = J.td;
}

void PreintegrationFactor::evaluate(std::span<const double* const> params, double* residual,
                                    std::span<double* const> jacobians) const {
  auto state = [&](int o, double t) {
    NavState x;
    x.t = t;
    x.p = Eigen::Map<const Vec3>(params[o]);
    x.q = quat_from(params[o + 1]);
    x.v = Eigen::Map<const Vec3>(params[o + 2]);
    x.bg = Eigen::Map<const Vec3>(params[o + 3]);
    x.ba = Eigen::Map<const Vec3>(params[o + 4]);
    return x;
  };
  const NavState xi = state(0, pre_->t0());
  const NavState xj = state(5, pre_->t0() + pre_->dt());
  bool need = false;
  for (double* j : jacobians) need = need || j != nullptr;
  PreintegrationJacobians J;
  const Vec15 r = preintegration_residual(xi, xj, *pre_, gravity_, need ? &J : nullptr);
  const Mat15& S = pre_->sqrt_information();
  Eigen::Map<Vec15> res(residual);
  res = S * r;
  if (!need) return;
  const Mat15 Ji = S * J.d_xi;
  const Mat15 Jj = S * J.d_xj;
  for (int k = 0; k < 10; ++k) {
    if (jacobians[k] == nullptr) continue;
    const Mat15& src = k < 5 ? Ji : Jj;
    Eigen::Map<Eigen::Matrix<double, 15, 3>> dst(jacobians[k]);
    dst = src.middleCols<3>(3 * (k % 5));
  }
}

}  // namespace f2f
