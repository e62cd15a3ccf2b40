#pragma once

// Synthetic plane worlds, smooth trajectories, IMU synthesis and a rosette
// LiDAR scan.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "f2f/ins.hpp"
#include "f2f/pointcloud.hpp"
#include "f2f/se3.hpp"

namespace f2f {

/// Finite rectangle: center, unit normal, in-plane axis u (v = n x u) and
/// half extents along u and v.
struct PlaneSurface {
  Vec3 center = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  Vec3 axis_u = Vec3::UnitX();
  double half_u = 1.0;
  double half_v = 1.0;

  PlaneCoeffs coeffs() const { return {normal, -normal.dot(center)}; }
};

struct PlaneWorld {
  std::vector<PlaneSurface> planes;
};

/// Builds a rectangle from a normal and a point; axis_u is made orthogonal.
PlaneSurface make_plane(const Vec3& center, const Vec3& normal, const Vec3& axis_hint, double half_u,
                        double half_v);

struct RayHit {
  double range = 0.0;
  int plane = -1;
};

/// Nearest intersection along a unit direction within (0, max_range].
std::optional<RayHit> raycast(const PlaneWorld& world, const Vec3& origin, const Vec3& dir, double max_range);

struct TrajectoryPoint {
  double t = 0.0;
  Vec3 p = Vec3::Zero();      // world
  Vec3 v = Vec3::Zero();      // world
  Vec3 a = Vec3::Zero();      // world kinematic acceleration
  Quat q = Quat::Identity();  // body to world
  Vec3 omega = Vec3::Zero();  // body angular rate
};

class Trajectory {
 public:
  virtual ~Trajectory() = default;
  virtual TrajectoryPoint at(double t) const = 0;
  virtual double duration() const = 0;
};

enum class PathKind { kCircle, kFigureEight, kOutAndBack };

/// Planar path with a smooth time warp: a static start, a quintic speed ramp,
/// speed modulation, roll/pitch wobble and a vertical bob.
struct PathTrajectorySpec {
  PathKind kind = PathKind::kCircle;
  Vec3 origin = Vec3::Zero();  // path start; the circle center is origin + (0, radius, 0)
  double size_a = 4.0;         // circle radius / figure-eight half length / straight leg length
  double size_b = 4.0;         // figure-eight half width / U-turn length
  double speed = 1.5;          // m/s nominal
  double duration = 60.0;
  double static_time = 2.0;
  double ramp_time = 3.0;
  double speed_mod = 0.3;      // relative amplitude of the sin^3 speed modulation
  double speed_mod_freq = 0.125;
  double wobble = 3.0 * kDegToRad;
  double wobble_freq = 0.23;
  double bob = 0.05;  // m
  double bob_freq = 0.31;
};

std::shared_ptr<const Trajectory> make_path_trajectory(const PathTrajectorySpec& spec);

/// Constant pose for `duration` seconds.
std::shared_ptr<const Trajectory> make_static_trajectory(const Pose& pose, double duration);

/// Level circle at constant speed from t = 0 (no static start).
std::shared_ptr<const Trajectory> make_circle_trajectory(double radius, double speed, double duration);

struct SensorRig {
  Extrinsics ext;        // true LiDAR-to-IMU transform
  double td = 0.0;       // true delay: LiDAR stamp s is IMU time s + td
  double imu_rate = 200.0;
  double lidar_rate = 10.0;
  double lidar_start = 0.1;  // first frame stamp
  int points_per_frame = 2000;
  double fov_half = 35.0 * kDegToRad;
  double rosette_f1 = 172.9;  // Hz, radial oscillation
  double rosette_f2 = 11.43;  // Hz, azimuth rotation
  double max_range = 100.0;
  RangeGate range_gate;
  ImuNoise imu_noise;
  bool imu_noise_on = true;
  double range_noise = 0.02;  // m
  Vec3 bg0 = Vec3::Zero();    // initial true biases
  Vec3 ba0 = Vec3::Zero();
  Gravity gravity;
};

struct ImuSynthesis {
  std::vector<ImuSample> samples;
  std::vector<NavState> truth;  // true state at each sample, biases included
};

/// f = R^T (a - g) + b_a + noise, omega = omega_true + b_g + noise. Biases
/// follow random walks when noise is on.
ImuSynthesis synth_imu(const Trajectory& traj, const SensorRig& rig, std::uint64_t seed);

struct SimFrame {
  LidarFrame frame;
  std::vector<int> labels;  // source plane per point
};

/// Rosette scan ray directions in the LiDAR frame for a frame stamp.
std::vector<std::pair<double, Vec3>> rosette_rays(const SensorRig& rig, double stamp);

/// One frame per LiDAR period while the trajectory (shifted by td) lasts.
std::vector<SimFrame> synth_lidar(const Trajectory& traj, const PlaneWorld& world, const SensorRig& rig,
                                  std::uint64_t seed);
SimFrame synth_lidar_frame(const Trajectory& traj, const PlaneWorld& world, const SensorRig& rig, double stamp,
                           std::uint64_t seed);

struct ScenarioOptions {
  std::optional<double> duration;
  bool noise = true;
  Extrinsics ext;
  double td = 0.0;
  std::optional<int> points_per_frame;
};

struct Scenario {
  std::string name;
  std::uint64_t seed = 0;
  PlaneWorld world;
  std::shared_ptr<const Trajectory> trajectory;
  SensorRig rig;
  ImuSynthesis imu;
  std::vector<SimFrame> lidar;

  std::vector<StampedPose> truth() const;
  /// Path length of the ground truth.
  double distance() const;
};

/// "corridor", "room-orbit" or "figure-eight". Throws std::invalid_argument
/// for unknown names.
Scenario make_scenario(const std::string& name, std::uint64_t seed, const ScenarioOptions& options = {});

std::vector<std::string> scenario_names();

}  // namespace f2f
