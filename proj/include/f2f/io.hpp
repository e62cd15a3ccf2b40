#pragma once

// Dataset files, run configuration and result writers.
//
// IMU file:        `t wx wy wz ax ay az` per line, `#` comments allowed.
// LiDAR directory: one `<stamp_ns>.txt` per frame, `t_offset x y z` per line.
// Trajectory:      `t px py pz qx qy qz qw` per line.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "f2f/estimator.hpp"
#include "f2f/ins.hpp"
#include "f2f/pointcloud.hpp"
#include "f2f/se3.hpp"

namespace f2f {

using TrajectoryRecord = StampedPose;

/// Throws f2f::Error with the line number on malformed or non-increasing input.
std::vector<ImuSample> load_imu(const std::filesystem::path& path);
void save_imu(const std::filesystem::path& path, const std::vector<ImuSample>& samples);

/// Frames sorted by stamp. Out-of-order file names are reordered and a
/// warning is appended. Throws when a point's t_offset is outside
/// [0, frame_period).
std::vector<LidarFrame> load_lidar(const std::filesystem::path& dir, double frame_period,
                                   std::vector<std::string>* warnings = nullptr);
void save_lidar(const std::filesystem::path& dir, const std::vector<LidarFrame>& frames);

std::vector<TrajectoryRecord> load_trajectory(const std::filesystem::path& path);
void save_trajectory(const std::filesystem::path& path, const std::vector<TrajectoryRecord>& records);

struct AttitudeStdRecord {
  double t = 0.0;
  AttitudeStd std;
};
void save_attitude_std(const std::filesystem::path& path, const std::vector<AttitudeStdRecord>& records);

struct CalibrationRecord {
  double t = 0.0;
  Extrinsics ext;
  double td = 0.0;
};
/// `t ex_deg ey_deg ez_deg px py pz td_ms`, rotation as roll/pitch/yaw.
void save_calibration(const std::filesystem::path& path, const std::vector<CalibrationRecord>& records);

/// Flat `key = value` text with `#` comments.
std::map<std::string, std::string> load_key_values(const std::filesystem::path& path);

struct RunConfig {
  std::filesystem::path imu;
  std::filesystem::path lidar;
  std::filesystem::path truth;  // optional; enables the metrics file
  std::filesystem::path output;
  double lidar_period = 0.1;  // s
  EstimatorOptions estimator;
};

/// Reads a config file. Relative paths resolve against the file's directory.
/// Keys: imu, lidar, truth, output, lidar_period, gyro_noise, accel_noise,
/// gyro_walk, accel_walk, keyframe_translation, keyframe_rotation_deg,
/// keyframe_interval, lidar_sigma, ext_roll_deg, ext_pitch_deg, ext_yaw_deg,
/// ext_px, ext_py, ext_pz, td, calibrate, outlier_fraction, seed.
RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& config);

}  // namespace f2f
