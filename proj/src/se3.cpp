#include "f2f/se3.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace f2f {

namespace {
constexpr double kSmallAngle = 1e-8;
}

Mat3 skew(const Vec3& v) {
  Mat3 S;
  S << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return S;
}

Mat3 exp_so3(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 K = skew(phi);
  if (theta < kSmallAngle) {
    return Mat3::Identity() + K + 0.5 * K * K;
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * K + b * K * K;
}

Vec3 log_so3(const Mat3& R) { return quat_log(Quat(R)); }

Quat quat_exp(const Vec3& phi) {
  const double theta = phi.norm();
  if (theta < kSmallAngle) {
    Quat q(1.0, 0.5 * phi.x(), 0.5 * phi.y(), 0.5 * phi.z());
    return q.normalized();
  }
  const double half = 0.5 * theta;
  const Vec3 v = std::sin(half) / theta * phi;
  return Quat(std::cos(half), v.x(), v.y(), v.z());
}

Vec3 quat_log(const Quat& q_in) {
  const Quat q = canonical(q_in.normalized());
  const Vec3 v = q.vec();
  const double s = v.norm();
  if (s < kSmallAngle) {
    // 2 * v / w to second order
    return 2.0 * v / q.w();
  }
  const double theta = 2.0 * std::atan2(s, q.w());
  return theta / s * v;
}

Quat quat_mul(const Quat& a, const Quat& b) { return (a * b).normalized(); }

Quat canonical(const Quat& q) {
  if (q.w() < 0.0) return Quat(-q.w(), -q.x(), -q.y(), -q.z());
  return q;
}

Mat3 right_jacobian(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 K = skew(phi);
  if (theta < 1e-6) {
    return Mat3::Identity() - 0.5 * K + K * K / 6.0;
  }
  const double t2 = theta * theta;
  return Mat3::Identity() - (1.0 - std::cos(theta)) / t2 * K +
         (theta - std::sin(theta)) / (t2 * theta) * K * K;
}

Mat3 right_jacobian_inv(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 K = skew(phi);
  if (theta < 1e-6) {
    return Mat3::Identity() + 0.5 * K + K * K / 12.0;
  }
  const double t2 = theta * theta;
  const double c = 1.0 / t2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  return Mat3::Identity() + 0.5 * K + c * K * K;
}

Vec3 rotation_to_euler(const Mat3& R) {
  const double pitch = std::asin(std::clamp(-R(2, 0), -1.0, 1.0));
  const double roll = std::atan2(R(2, 1), R(2, 2));
  const double yaw = std::atan2(R(1, 0), R(0, 0));
  return {roll, pitch, yaw};
}

Mat3 euler_to_rotation(double roll, double pitch, double yaw) {
  return (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
          Eigen::AngleAxisd(roll, Vec3::UnitX()))
      .toRotationMatrix();
}

Pose Pose::inverse() const {
  const Quat qi = q.conjugate();
  return {-(qi * p), qi};
}

Pose Pose::operator*(const Pose& rhs) const {
  return {q * rhs.p + p, quat_mul(q, rhs.q)};
}

Quat slerp(const Quat& a, const Quat& b, double alpha) {
  Quat bb = b;
  if (a.dot(b) < 0.0) bb.coeffs() = -b.coeffs();
  const Vec3 delta = quat_log(a.conjugate() * bb);
  return quat_mul(a, quat_exp(alpha * delta));
}

Pose pose_interpolate(const StampedPose& a, const StampedPose& b, double t) {
  if (!(b.t > a.t)) throw std::invalid_argument("pose_interpolate: t1 must exceed t0");
  if (t < a.t || t > b.t) throw std::out_of_range("pose_interpolate: t outside [t0, t1]");
  const double alpha = (t - a.t) / (b.t - a.t);
  if (alpha == 0.0) return a.pose;
  if (alpha == 1.0) return b.pose;
  Pose out;
  out.p = (1.0 - alpha) * a.pose.p + alpha * b.pose.p;
  out.q = slerp(a.pose.q, b.pose.q, alpha);
  return out;
}

}  // namespace f2f
