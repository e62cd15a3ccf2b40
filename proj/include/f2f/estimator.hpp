#pragma once

// Sliding-window LiDAR-inertial estimator: keyframe selection, window
// optimization with two-step outlier culling, marginalization and the frame
// processing loop that ties INS, undistortion, mapping and association
// together.

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <vector>

#include "f2f/association.hpp"
#include "f2f/ins.hpp"
#include "f2f/lidar_factor.hpp"
#include "f2f/nlls.hpp"
#include "f2f/pointcloud.hpp"

namespace f2f {

struct KeyframePolicy {
  double translation = 0.4;             // m
  double rotation = 10.0 * kDegToRad;   // rad
  double interval = 0.5;                // s
};

/// True iff translation > 0.4 m or rotation > 10 deg or elapsed >= 0.5 s.
bool select_keyframe(double translation, double rotation, double elapsed, const KeyframePolicy& policy = {});

inline constexpr std::size_t kWindowSize = 10;      // n; the window holds n + 1 keyframes
inline constexpr double kChiSquare95 = 3.841;       // 1 dof

struct CalibrationOptions {
  bool enabled = true;
  double activation_rotation = 15.0 * kDegToRad;  // accumulated keyframe rotation
  double degeneracy_eigenvalue = 0.01;             // mean n n^T of accepted normals
  double max_lever_arm = 2.0;                       // m
  double max_time_delay = 0.1;                      // s
  // Weak prior attached when calibration switches on.
  double prior_rotation = 5.0 * kDegToRad;
  double prior_translation = 0.2;
  double prior_time_delay = 0.02;
};

/// Standard deviations of the first state's prior.
struct InitialPrior {
  double position = 1e-3;               // m
  double roll_pitch = 0.5 * kDegToRad;  // rad
  double yaw = 1e-3 * kDegToRad;        // rad
  double velocity = 0.01;               // m/s
  double gyro_bias = 0.002;             // rad/s, upper bound on the static estimate's STD
  double accel_bias = 0.05;             // m/s^2
};

struct EstimatorOptions {
  KeyframePolicy keyframe;
  std::size_t window_size = kWindowSize;
  AssociationOptions association;
  std::size_t max_source_points = 50;
  double voxel_leaf = kVoxelLeaf;
  RangeGate range_gate;
  double huber_delta = 1.0;  // whitened
  double chi_square = kChiSquare95;
  nlls::SolverOptions solver;
  ImuNoise imu_noise;
  Gravity gravity;
  Extrinsics initial_extrinsics;
  double initial_time_delay = 0.0;
  CalibrationOptions calibration;
  InitialPrior prior;
  ZeroVelocityThresholds static_detection;
  double init_window = 1.0;  // s of static IMU before the first frame
  // Re-integrate a preintegration when the bias estimate moves this far.
  double repropagate_gyro = 1e-4;
  double repropagate_accel = 1e-2;
  // Evaluation hook: rebind this fraction of associations to wrong planes.
  double outlier_fraction = 0.0;
  std::uint64_t outlier_seed = 1;
};

struct WindowEntry {
  std::size_t id = 0;
  double stamp = 0.0;  // LiDAR clock
  NavState state;      // at stamp + epoch.td_lin
  KeyframeEpoch epoch;
  std::shared_ptr<const KeyframeMap> map;
  std::vector<Vec3> source;  // subsampled undistorted points used for association
  std::shared_ptr<const Preintegration> pre;  // from the predecessor; null for the first keyframe
};

struct Window {
  std::deque<WindowEntry> entries;
  Extrinsics ext;
  double td = 0.0;
  nlls::PriorFactor prior;
  /// Every keyframe against older maps; `source` and `target` are window
  /// slots. Factors stay until their target keyframe is marginalized.
  std::vector<PlaneAssociation> associations;
  std::vector<bool> injected;  // parallel to associations
  bool calibrate = false;      // ext/td are free variables
};

/// Parameter block keys.
nlls::BlockKey state_key(std::size_t id, int component);  // 0..4 = p, q, v, bg, ba
inline constexpr nlls::BlockKey kExtPositionKey = nlls::BlockKey{1} << 62;
inline constexpr nlls::BlockKey kExtRotationKey = kExtPositionKey + 1;
inline constexpr nlls::BlockKey kTimeDelayKey = kExtPositionKey + 2;

/// The window's factor graph. LiDAR residual ids are parallel to
/// window.associations.
struct WindowProblem {
  nlls::Problem problem;
  std::vector<nlls::ResidualId> lidar;
  std::vector<nlls::ResidualId> imu;
};

/// `free_calibration` makes ext/td variables; otherwise they are constant.
WindowProblem build_window_problem(const Window& window, const Gravity& gravity, bool free_calibration);

/// Copies the solved values back into the window.
void read_back(const nlls::Problem& problem, Window& window, bool calibration);

struct AttitudeStd {
  double roll = 0.0, pitch = 0.0, yaw = 0.0;  // deg
};

struct OptimizationReport {
  nlls::SolverSummary step1, step2;
  std::size_t associations = 0;
  std::size_t culled = 0;
  std::size_t injected = 0;
  std::size_t injected_culled = 0;
  double whitened_rms = 0.0;  // surviving LiDAR residuals after step 2
  bool calibration_free = false;
  bool degenerate = false;
  bool calibration_reverted = false;
  std::vector<bool> kept;  // parallel to window.associations
  std::optional<AttitudeStd> attitude;
};

/// Two-step solve: Huber on LiDAR residuals, chi-square culling, then a
/// plain solve on the survivors. Throws f2f::Error when a step fails.
OptimizationReport optimize_window(Window& window, const EstimatorOptions& options);

/// Smallest eigenvalue of the mean n n^T over the associations' world normals.
double normal_spread(const Window& window);

/// Marginalizes the oldest keyframe with its preintegration factor, the
/// kept LiDAR factors that target it and the current prior, then drops it.
/// Culled factors are dropped for good.
/// Ext/td join the prior whenever the window calibrates.
void marginalize_and_slide(Window& window, const Gravity& gravity, const std::vector<bool>& kept);

/// Roll, pitch and yaw STD of the newest attitude from the marginal
/// covariance, expressed about heading-frame axes.
AttitudeStd attitude_std(const nlls::Problem& problem, const Window& window);

/// Rotates a body-tangent attitude covariance into heading-frame axes.
AttitudeStd attitude_std_from_covariance(const Mat3& body_cov, const Quat& q);

struct FrameOutput {
  double t = 0.0;  // IMU clock
  double stamp = 0.0;
  Pose pose;
  bool keyframe = false;
  Extrinsics ext;
  double td = 0.0;
  std::optional<OptimizationReport> report;
};

class Estimator {
 public:
  explicit Estimator(EstimatorOptions options = {});

  /// Samples must arrive in increasing time order.
  void add_imu(const ImuSample& sample);

  /// Processes one LiDAR frame. IMU must already cover the whole frame.
  /// Throws f2f::FrameSkipped when the frame cannot be used.
  FrameOutput process_frame(const LidarFrame& frame);

  bool initialized() const { return initialized_; }
  const Window& window() const { return window_; }
  const EstimatorOptions& options() const { return options_; }
  bool calibration_active() const { return calibration_active_; }
  const InsPoseBuffer& ins() const { return ins_; }
  /// Associations rebound to wrong planes so far.
  std::size_t outliers_injected() const { return outliers_injected_; }

 private:
  void initialize(double tau);
  void reset_ins(const NavState& x);
  FrameOutput process_keyframe(const LidarFrame& undistorted, double tau);
  std::vector<Vec3> select_source(const LidarFrame& undistorted) const;
  void associate();
  void inject_outliers();
  void update_calibration_gate();
  void repropagate();
  nlls::PriorFactor initial_prior(const NavState& x) const;

  EstimatorOptions options_;
  std::vector<ImuSample> imu_;
  ImuSample ins_sample_;  // IMU sample at ins_state_.t
  InsPoseBuffer ins_;
  NavState ins_state_;
  bool initialized_ = false;
  Window window_;
  std::vector<LidarFrame> intermediates_;
  std::size_t next_id_ = 0;
  double accumulated_rotation_ = 0.0;
  bool calibration_active_ = false;
  std::uint64_t keyframe_count_ = 0;
  std::size_t outliers_injected_ = 0;
  double init_gyro_bias_sigma_ = 0.0;
};

}  // namespace f2f
