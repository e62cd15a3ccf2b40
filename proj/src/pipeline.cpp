#include "f2f/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <ostream>

#include "f2f/error.hpp"

namespace f2f {

namespace fs = std::filesystem;

RunResult run_estimator(const EstimatorOptions& options, const std::vector<ImuSample>& imu,
                        const std::vector<LidarFrame>& frames, double lidar_period, std::ostream* log) {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  RunResult result;
  Estimator est(options);
  // Margin past the frame end so the INS covers every point.
  const double lead = lidar_period + 0.05;
  std::size_t next = 0;
  for (const auto& frame : frames) {
    const double until = frame.stamp + est.window().td + lead;
    while (next < imu.size() && imu[next].t <= until) est.add_imu(imu[next++]);
    ++result.frames;
    try {
      const auto t0 = Clock::now();
      const FrameOutput out = est.process_frame(frame);
      const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
      result.trajectory.push_back({out.t, out.pose});
      if (!out.keyframe) continue;
      result.calibration.push_back({out.t, out.ext, out.td});
      const auto& rep = *out.report;
      if (rep.attitude) result.attitude.push_back({out.t, *rep.attitude});
      result.keyframes.push_back(
          {out.t, rep.whitened_rms, rep.associations, rep.culled, rep.injected_culled, rep.calibration_free, ms});
    } catch (const FrameSkipped& e) {
      ++result.skipped;
      if (log) *log << "frame " << frame.stamp << " skipped: " << e.what() << '\n';
    } catch (const Error& e) {
      ++result.skipped;
      if (log) *log << "frame " << frame.stamp << " failed: " << e.what() << '\n';
    }
  }
  result.outliers_injected = est.outliers_injected();
  result.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return result;
}

int run_pipeline(const RunConfig& config, std::ostream& log) {
  std::vector<ImuSample> imu;
  std::vector<LidarFrame> frames;
  std::vector<TrajectoryRecord> truth;
  try {
    if (!fs::is_regular_file(config.imu)) throw Error("IMU file not found: " + config.imu.string());
    imu = load_imu(config.imu);
    std::vector<std::string> warnings;
    frames = load_lidar(config.lidar, config.lidar_period, &warnings);
    for (const auto& w : warnings) log << "warning: " << w << '\n';
    if (!config.truth.empty()) truth = load_trajectory(config.truth);
  } catch (const Error& e) {
    log << "error: " << e.what() << '\n';
    return 2;
  }
  if (imu.empty() || frames.empty()) {
    log << "error: dataset has no IMU samples or no LiDAR frames\n";
    return 2;
  }

  const RunResult r = run_estimator(config.estimator, imu, frames, config.lidar_period, &log);
  try {
    fs::create_directories(config.output);
    save_trajectory(config.output / "trajectory.txt", r.trajectory);
    save_attitude_std(config.output / "attitude_std.txt", r.attitude);
    save_calibration(config.output / "calibration.txt", r.calibration);
    if (!truth.empty()) {
      const TrajectoryMetrics m = evaluate(r.trajectory, truth);
      const double distance = path_length(truth);
      std::ofstream out(config.output / "metrics.txt");
      if (!out) throw Error("cannot write metrics");
      out << "ate_m = " << m.ate << '\n'
          << "are_deg = " << m.are << '\n'
          << "end_to_end_m = " << m.end_to_end << '\n'
          << "distance_m = " << distance << '\n'
          << "ate_percent = " << 100.0 * m.ate / distance << '\n'
          << "frames = " << r.frames << '\n'
          << "skipped = " << r.skipped << '\n'
          << "keyframes = " << r.keyframes.size() << '\n';
      log << "ATE " << m.ate << " m, ARE " << m.are << " deg, end-to-end " << m.end_to_end << " m over " << distance
          << " m\n";
    }
  } catch (const Error& e) {
    log << "error: " << e.what() << '\n';
    return 3;
  }
  log << r.frames << " frames, " << r.keyframes.size() << " keyframes, " << r.skipped << " skipped, " << r.seconds
      << " s\n";
  return 0;
}

std::vector<TrajectoryRecord> truth_trajectory(const Scenario& scenario) {
  std::vector<TrajectoryRecord> out;
  out.reserve(scenario.imu.truth.size());
  for (const auto& x : scenario.imu.truth) out.push_back({x.t, x.pose()});
  return out;
}

void export_scenario(const Scenario& scenario, const fs::path& dir, const EstimatorOptions& options) {
  fs::create_directories(dir);
  save_imu(dir / "imu.txt", scenario.imu.samples);
  std::vector<LidarFrame> frames;
  frames.reserve(scenario.lidar.size());
  for (const auto& sf : scenario.lidar) frames.push_back(sf.frame);
  save_lidar(dir / "lidar", frames);
  save_trajectory(dir / "truth.txt", truth_trajectory(scenario));
  RunConfig config;
  config.imu = "imu.txt";
  config.lidar = "lidar";
  config.truth = "truth.txt";
  config.output = "result";
  config.lidar_period = 1.0 / scenario.rig.lidar_rate;
  config.estimator = options;
  save_config(dir / "config.txt", config);
}

}  // namespace f2f
