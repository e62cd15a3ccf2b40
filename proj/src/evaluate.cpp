#include "f2f/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "f2f/error.hpp"

namespace f2f {

namespace {

double yaw_of(const Quat& q) { return rotation_to_euler(q.toRotationMatrix()).z(); }

Quat yaw_quat(double yaw) { return Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ())); }

}  // namespace

Pose interpolate_trajectory(const std::vector<TrajectoryRecord>& records, double t) {
  if (records.empty() || t < records.front().t || t > records.back().t)
    throw std::out_of_range("interpolate_trajectory: time outside the trajectory");
  auto it = std::lower_bound(records.begin(), records.end(), t,
                             [](const TrajectoryRecord& r, double x) { return r.t < x; });
  if (it->t == t) return it->pose;
  return pose_interpolate(*(it - 1), *it, t);
}

double path_length(const std::vector<TrajectoryRecord>& records) {
  double d = 0.0;
  for (std::size_t k = 1; k < records.size(); ++k) d += (records[k].pose.p - records[k - 1].pose.p).norm();
  return d;
}

TrajectoryMetrics evaluate(const std::vector<TrajectoryRecord>& estimate, const std::vector<TrajectoryRecord>& truth) {
  std::vector<Pose> est, ref;
  for (const auto& r : estimate) {
    if (truth.empty() || r.t < truth.front().t || r.t > truth.back().t) continue;
    est.push_back(r.pose);
    ref.push_back(interpolate_trajectory(truth, r.t));
  }
  if (est.size() < 2) throw Error("evaluate: fewer than two overlapping poses");
  const double n = static_cast<double>(est.size());

  // Yaw and translation that map the first estimated pose onto the truth.
  const Quat qa = yaw_quat(yaw_of(ref.front().q) - yaw_of(est.front().q));
  const Vec3 ta = ref.front().p - qa * est.front().p;

  TrajectoryMetrics m;
  m.matched = est.size();
  double se = 0.0, sr = 0.0;
  for (std::size_t k = 0; k < est.size(); ++k) {
    se += (qa * est[k].p + ta - ref[k].p).squaredNorm();
    const double angle = quat_log(ref[k].q.conjugate() * (qa * est[k].q)).norm();
    sr += angle * angle;
  }
  m.ate = std::sqrt(se / n);
  m.are = std::sqrt(sr / n) * kRadToDeg;

  m.end_to_end = (qa * est.back().p + ta - ref.back().p).norm();
  return m;
}

}  // namespace f2f
