#pragma once

// Drives the estimator over a recorded dataset and writes the results.

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "f2f/estimator.hpp"
#include "f2f/evaluate.hpp"
#include "f2f/io.hpp"
#include "f2f/simulator.hpp"

namespace f2f {

struct KeyframeSummary {
  double t = 0.0;
  double whitened_rms = 0.0;
  std::size_t associations = 0;
  std::size_t culled = 0;
  std::size_t injected_culled = 0;
  bool calibration_free = false;
  double solve_ms = 0.0;  // whole keyframe step
};

struct RunResult {
  std::vector<TrajectoryRecord> trajectory;  // one pose per processed frame
  std::vector<AttitudeStdRecord> attitude;   // per keyframe
  std::vector<CalibrationRecord> calibration;  // per keyframe
  std::vector<KeyframeSummary> keyframes;
  std::size_t frames = 0;
  std::size_t skipped = 0;
  std::size_t outliers_injected = 0;
  double seconds = 0.0;  // wall time
};

/// Feeds IMU ahead of each frame and runs every frame through the estimator.
/// Skipped frames and estimator errors are logged and the run continues.
RunResult run_estimator(const EstimatorOptions& options, const std::vector<ImuSample>& imu,
                        const std::vector<LidarFrame>& frames, double lidar_period, std::ostream* log = nullptr);

/// Loads the dataset, runs it and writes trajectory.txt, attitude_std.txt,
/// calibration.txt and, with a truth file, metrics.txt into config.output.
/// Returns 0 on success. Missing or unreadable inputs return nonzero before
/// anything is written.
int run_pipeline(const RunConfig& config, std::ostream& log);

/// True body trajectory at the IMU rate.
std::vector<TrajectoryRecord> truth_trajectory(const Scenario& scenario);

/// Writes imu.txt, lidar/, truth.txt and config.txt for `f2f run`.
void export_scenario(const Scenario& scenario, const std::filesystem::path& dir, const EstimatorOptions& options);

}  // namespace f2f
