#pragma once

// Trajectory error metrics under the yaw-plus-translation gauge.

#include <vector>

#include "f2f/io.hpp"

namespace f2f {

struct TrajectoryMetrics {
  double ate = 0.0;         // m, RMS position error
  double are = 0.0;         // deg, RMS attitude error
  double end_to_end = 0.0;  // m, final position error
  std::size_t matched = 0;  // estimate poses inside the truth span
};

/// Truth is interpolated at the estimate stamps. The estimate is aligned by
/// the rotation about gravity and the translation that put its first pose on
/// the truth. Throws f2f::Error with fewer than two overlapping poses.
TrajectoryMetrics evaluate(const std::vector<TrajectoryRecord>& estimate, const std::vector<TrajectoryRecord>& truth);

/// Pose at t by interpolation; throws std::out_of_range outside the span.
Pose interpolate_trajectory(const std::vector<TrajectoryRecord>& records, double t);

/// Path length of the positions.
double path_length(const std::vector<TrajectoryRecord>& records);

}  // namespace f2f
