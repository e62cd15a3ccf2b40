#pragma once

// Point-to-plane factor between the newest keyframe and an older one, with
// LiDAR-IMU extrinsics and time delay as variables.
//
// Keyframe k was processed with delay td_lin_k, so its state lives at
// stamp_k + td_lin_k. For the current delay t_d each pose is shifted to first
// order along the keyframe's motion: p + v * dt_k and R * Exp(omega_k * dt_k),
// dt_k = t_d - td_lin_k, where omega_k is the body rate at that epoch.

#include <Eigen/Core>

#include "f2f/association.hpp"
#include "f2f/ins.hpp"
#include "f2f/nlls.hpp"
#include "f2f/pointcloud.hpp"

namespace f2f {

struct KeyframeEpoch {
  double td_lin = 0.0;
  Vec3 omega = Vec3::Zero();  // rad/s, body frame
};

using Row3 = Eigen::Matrix<double, 1, 3>;

/// Whitened Jacobians of one LiDAR residual.
struct LidarJacobians {
  Row3 p_n, phi_n, v_n;
  Row3 p_i, phi_i, v_i;
  Row3 p_ext, phi_ext;
  double td = 0.0;
};

/// (n^T p^{r_i} + d) / sigma along the chain newest LiDAR -> world -> IMU i
/// -> LiDAR i.
double lidar_residual(const NavState& xn, const KeyframeEpoch& en, const NavState& xi, const KeyframeEpoch& ei,
                      const Extrinsics& ext, double t_d, const PlaneAssociation& assoc,
                      LidarJacobians* jac = nullptr);

/// Parameter blocks: p_n, q_n, v_n, p_i, q_i, v_i, p_ext, q_ext, t_d.
class LidarFactor : public nlls::CostFunction {
 public:
  LidarFactor(const PlaneAssociation& assoc, const KeyframeEpoch& en, const KeyframeEpoch& ei)
      : assoc_(assoc), en_(en), ei_(ei) {}

  int residual_dim() const override { return 1; }
  void evaluate(std::span<const double* const> params, double* residual,
                std::span<double* const> jacobians) const override;

  const PlaneAssociation& association() const { return assoc_; }

 private:
  PlaneAssociation assoc_;
  KeyframeEpoch en_, ei_;
};

/// Parameter blocks: p_i, q_i, v_i, bg_i, ba_i, p_j, q_j, v_j, bg_j, ba_j.
/// Residual whitened by the preintegration square-root information.
class PreintegrationFactor : public nlls::CostFunction {
 public:
  PreintegrationFactor(std::shared_ptr<const Preintegration> pre, const Gravity& gravity)
      : pre_(std::move(pre)), gravity_(gravity) {}

  int residual_dim() const override { return 15; }
  void evaluate(std::span<const double* const> params, double* residual,
                std::span<double* const> jacobians) const override;

 private:
  std::shared_ptr<const Preintegration> pre_;
  Gravity gravity_;
};

}  // namespace f2f
