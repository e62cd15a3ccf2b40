#pragma once

// Rotation and rigid-body helpers.
//
// Conventions (used everywhere in the project):
//  - Quaternions are Eigen::Quaterniond, Hamilton product, storage order
//    (x, y, z, w) as returned by coeffs(). q_b^w maps body vectors to world:
//    v^w = q_b^w * v^b.
//  - Attitude errors are right perturbations: R_true = R_est * Exp(dphi).
//  - Serialized quaternions are canonicalized to w >= 0.

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace f2f {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kDegToRad = kPi / 180.0;
inline constexpr double kRadToDeg = 180.0 / kPi;

/// skew(v) * u == v.cross(u)
Mat3 skew(const Vec3& v);

Mat3 exp_so3(const Vec3& phi);
/// Rotation vector with |phi| <= pi.
Vec3 log_so3(const Mat3& R);

Quat quat_exp(const Vec3& phi);
Vec3 quat_log(const Quat& q);

/// Normalized Hamilton product a ⊗ b.
Quat quat_mul(const Quat& a, const Quat& b);

/// Returns the same rotation with w >= 0.
Quat canonical(const Quat& q);

/// Right Jacobian of SO(3): Exp(phi + d) ≈ Exp(phi) Exp(Jr(phi) d).
Mat3 right_jacobian(const Vec3& phi);
Mat3 right_jacobian_inv(const Vec3& phi);

/// ZYX Euler angles (roll, pitch, yaw) of R = Rz(yaw) Ry(pitch) Rx(roll).
Vec3 rotation_to_euler(const Mat3& R);
Mat3 euler_to_rotation(double roll, double pitch, double yaw);

/// Rigid transform: x_parent = q * x_child + p.
struct Pose {
  Vec3 p = Vec3::Zero();
  Quat q = Quat::Identity();

  Vec3 transform(const Vec3& x) const { return q * x + p; }
  Pose inverse() const;
  Pose operator*(const Pose& rhs) const;

  static Pose identity() { return {}; }
};

struct StampedPose {
  double t = 0.0;
  Pose pose;
};

/// Linear interpolation of translation and slerp of rotation for
/// a.t <= t <= b.t. Throws std::out_of_range outside that span.
Pose pose_interpolate(const StampedPose& a, const StampedPose& b, double t);

/// Slerp along the shortest arc; result is unit.
Quat slerp(const Quat& a, const Quat& b, double alpha);

}  // namespace f2f
