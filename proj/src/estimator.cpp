#include "f2f/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "f2f/error.hpp"

namespace f2f {

namespace {

using nlls::BlockKey;
using nlls::Manifold;

std::vector<double> vec_values(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
std::vector<double> quat_values(const Quat& q) { return {q.x(), q.y(), q.z(), q.w()}; }

Vec3 read_vec(const nlls::Problem& p, BlockKey key) {
  const auto v = p.values(key);
  return {v[0], v[1], v[2]};
}

Quat read_quat(const nlls::Problem& p, BlockKey key) {
  const auto v = p.values(key);
  return Quat(v[3], v[0], v[1], v[2]).normalized();
}

/// Appends independent blocks with diagonal (or full) square-root information
/// to a prior, linearized at the given values with zero residual.
void append_prior(nlls::PriorFactor& prior, BlockKey key, Manifold manifold, std::vector<double> values,
                  const Eigen::MatrixXd& sqrt_info) {
  const int n = static_cast<int>(sqrt_info.cols());
  const int old_rows = static_cast<int>(prior.sqrt_information.rows());
  const int old_cols = prior.tangent_dim();
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(old_rows + sqrt_info.rows(), old_cols + n);
  if (old_rows > 0) S.topLeftCorner(old_rows, old_cols) = prior.sqrt_information;
  S.bottomRightCorner(sqrt_info.rows(), n) = sqrt_info;
  Eigen::VectorXd r = Eigen::VectorXd::Zero(S.rows());
  if (old_rows > 0) r.head(old_rows) = prior.residual;
  prior.keys.push_back(key);
  prior.manifolds.push_back(manifold);
  prior.tangent_sizes.push_back(n);
  prior.linearization.push_back(std::move(values));
  prior.sqrt_information = std::move(S);
  prior.residual = std::move(r);
}

Eigen::MatrixXd diagonal_sqrt_info(int n, double sigma) {
  return Eigen::MatrixXd::Identity(n, n) / sigma;
}

}  // namespace

bool select_keyframe(double translation, double rotation, double elapsed, const KeyframePolicy& policy) {
  return translation > policy.translation || rotation > policy.rotation || elapsed >= policy.interval;
}

BlockKey state_key(std::size_t id, int component) { return static_cast<BlockKey>(id) * 8 + component; }

// ---------------------------------------------------------------------------
// Window problem

WindowProblem build_window_problem(const Window& window, const Gravity& gravity, bool free_calibration) {
  WindowProblem wp;
  nlls::Problem& P = wp.problem;
  for (const auto& e : window.entries) {
    P.add_block(state_key(e.id, 0), vec_values(e.state.p), Manifold::kEuclidean);
    P.add_block(state_key(e.id, 1), quat_values(e.state.q), Manifold::kQuaternion);
    P.add_block(state_key(e.id, 2), vec_values(e.state.v), Manifold::kEuclidean);
    P.add_block(state_key(e.id, 3), vec_values(e.state.bg), Manifold::kEuclidean);
    P.add_block(state_key(e.id, 4), vec_values(e.state.ba), Manifold::kEuclidean);
  }
  P.add_block(kExtPositionKey, vec_values(window.ext.p), Manifold::kEuclidean);
  P.add_block(kExtRotationKey, quat_values(window.ext.q), Manifold::kQuaternion);
  const std::vector<double> td{window.td};
  P.add_block(kTimeDelayKey, td, Manifold::kEuclidean);
  for (BlockKey k : {kExtPositionKey, kExtRotationKey, kTimeDelayKey}) P.set_constant(k, !free_calibration);

  for (std::size_t k = 1; k < window.entries.size(); ++k) {
    const auto& a = window.entries[k - 1];
    const auto& b = window.entries[k];
    if (!b.pre) throw std::invalid_argument("build_window_problem: missing preintegration");
    std::vector<BlockKey> blocks;
    for (const auto* e : {&a, &b})
      for (int c = 0; c < 5; ++c) blocks.push_back(state_key(e->id, c));
    wp.imu.push_back(P.add_residual(std::make_shared<PreintegrationFactor>(b.pre, gravity), std::move(blocks)));
  }

  for (const auto& assoc : window.associations) {
    if (assoc.source >= window.entries.size() || assoc.target >= assoc.source)
      throw std::invalid_argument("build_window_problem: association slots outside the window");
    const auto& source = window.entries[assoc.source];
    const auto& target = window.entries[assoc.target];
    std::vector<BlockKey> blocks{state_key(source.id, 0), state_key(source.id, 1), state_key(source.id, 2),
                                 state_key(target.id, 0), state_key(target.id, 1), state_key(target.id, 2),
                                 kExtPositionKey,         kExtRotationKey,         kTimeDelayKey};
    wp.lidar.push_back(
        P.add_residual(std::make_shared<LidarFactor>(assoc, source.epoch, target.epoch), std::move(blocks)));
  }
  if (!window.prior.empty()) P.set_prior(window.prior);
  return wp;
}

void read_back(const nlls::Problem& problem, Window& window, bool calibration) {
  for (auto& e : window.entries) {
    e.state.p = read_vec(problem, state_key(e.id, 0));
    e.state.q = read_quat(problem, state_key(e.id, 1));
    e.state.v = read_vec(problem, state_key(e.id, 2));
    e.state.bg = read_vec(problem, state_key(e.id, 3));
    e.state.ba = read_vec(problem, state_key(e.id, 4));
  }
  if (calibration) {
    window.ext.p = read_vec(problem, kExtPositionKey);
    window.ext.q = read_quat(problem, kExtRotationKey);
    window.td = problem.values(kTimeDelayKey)[0];
  }
}

double normal_spread(const Window& window) {
  if (window.associations.empty()) return 0.0;
  Mat3 S = Mat3::Zero();
  for (const auto& a : window.associations) {
    const Quat q = window.entries[a.target].state.q * window.ext.q;
    const Vec3 n = q * a.plane.n;
    S += n * n.transpose();
  }
  S /= static_cast<double>(window.associations.size());
  return Eigen::SelfAdjointEigenSolver<Mat3>(S).eigenvalues()(0);
}

AttitudeStd attitude_std_from_covariance(const Mat3& body_cov, const Quat& q) {
  const Mat3 R = q.toRotationMatrix();
  const double yaw = rotation_to_euler(R).z();
  const Mat3 H = Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
  const Mat3 cov = H.transpose() * R * body_cov * R.transpose() * H;
  auto sd = [&](int i) { return std::sqrt(std::max(cov(i, i), 0.0)) * kRadToDeg; };
  return {sd(0), sd(1), sd(2)};
}

AttitudeStd attitude_std(const nlls::Problem& problem, const Window& window) {
  if (window.entries.empty()) throw std::invalid_argument("attitude_std: empty window");
  const auto& newest = window.entries.back();
  const BlockKey key = state_key(newest.id, 1);
  const Eigen::MatrixXd cov = nlls::marginal_covariance(problem, std::span<const BlockKey>(&key, 1));
  return attitude_std_from_covariance(cov.topLeftCorner<3, 3>(), newest.state.q);
}

OptimizationReport optimize_window(Window& window, const EstimatorOptions& options) {
  if (window.entries.empty()) throw std::invalid_argument("optimize_window: empty window");
  OptimizationReport report;
  report.associations = window.associations.size();
  bool free = window.calibrate;
  if (free && normal_spread(window) < options.calibration.degeneracy_eigenvalue) {
    free = false;
    report.degenerate = true;
  }
  report.calibration_free = free;

  WindowProblem wp = build_window_problem(window, options.gravity, free);
  nlls::Problem& P = wp.problem;
  for (auto id : wp.lidar) P.set_residual_loss(id, nlls::Loss::huber(options.huber_delta));
  report.step1 = nlls::solve_lm(P, options.solver);
  if (report.step1.failed) throw Error("optimize_window: step 1 failed: " + report.step1.message);

  report.kept.assign(wp.lidar.size(), true);
  for (std::size_t k = 0; k < wp.lidar.size(); ++k) {
    const double r = P.evaluate_residual(wp.lidar[k])(0);
    if (r * r > options.chi_square) {
      P.set_residual_enabled(wp.lidar[k], false);
      report.kept[k] = false;
      ++report.culled;
      if (k < window.injected.size() && window.injected[k]) ++report.injected_culled;
    }
    P.set_residual_loss(wp.lidar[k], nlls::Loss::none());
  }
  for (bool b : window.injected) report.injected += b ? 1 : 0;  // still in the window

  report.step2 = nlls::solve_lm(P, options.solver);
  if (report.step2.failed) throw Error("optimize_window: step 2 failed: " + report.step2.message);

  if (free) {
    const double lever = read_vec(P, kExtPositionKey).norm();
    const double td = P.values(kTimeDelayKey)[0];
    if (lever >= options.calibration.max_lever_arm || std::abs(td) >= options.calibration.max_time_delay) {
      // Reject the calibration update and re-solve with it held.
      P.set_values(kExtPositionKey, vec_values(window.ext.p));
      P.set_values(kExtRotationKey, quat_values(window.ext.q));
      const std::vector<double> td_old{window.td};
      P.set_values(kTimeDelayKey, td_old);
      for (BlockKey k : {kExtPositionKey, kExtRotationKey, kTimeDelayKey}) P.set_constant(k, true);
      report.step2 = nlls::solve_lm(P, options.solver);
      if (report.step2.failed) throw Error("optimize_window: re-solve failed: " + report.step2.message);
      report.calibration_reverted = true;
      free = false;
    }
  }

  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < wp.lidar.size(); ++k) {
    if (!report.kept[k]) continue;
    const double r = P.evaluate_residual(wp.lidar[k])(0);
    sum += r * r;
    ++n;
  }
  report.whitened_rms = n > 0 ? std::sqrt(sum / static_cast<double>(n)) : 0.0;

  read_back(P, window, free);
  try {
    report.attitude = attitude_std(P, window);
  } catch (const Error&) {
    report.attitude.reset();
  }
  return report;
}

void marginalize_and_slide(Window& window, const Gravity& gravity, const std::vector<bool>& kept) {
  if (window.entries.size() < 2) throw std::invalid_argument("marginalize_and_slide: window too small");
  WindowProblem wp = build_window_problem(window, gravity, window.calibrate);
  for (std::size_t k = 0; k < wp.lidar.size(); ++k)
    if (k < kept.size() && !kept[k]) wp.problem.set_residual_enabled(wp.lidar[k], false);
  const std::size_t id = window.entries.front().id;
  std::vector<BlockKey> drop;
  for (int c = 0; c < 5; ++c) drop.push_back(state_key(id, c));
  window.prior = nlls::marginalize(wp.problem, drop);
  window.entries.pop_front();

  // Factors to the dropped keyframe now live in the prior.
  std::vector<PlaneAssociation> rest;
  std::vector<bool> rest_injected;
  for (std::size_t k = 0; k < window.associations.size(); ++k) {
    if (window.associations[k].target == 0 || (k < kept.size() && !kept[k])) continue;
    PlaneAssociation a = window.associations[k];
    --a.target;
    --a.source;
    rest.push_back(a);
    rest_injected.push_back(k < window.injected.size() && window.injected[k]);
  }
  window.associations = std::move(rest);
  window.injected = std::move(rest_injected);
}

// ---------------------------------------------------------------------------
// Estimator

Estimator::Estimator(EstimatorOptions options) : options_(std::move(options)) {
  if (options_.window_size < 1) throw std::invalid_argument("Estimator: window size must be positive");
  window_.ext = options_.initial_extrinsics;
  window_.td = options_.initial_time_delay;
}

void Estimator::add_imu(const ImuSample& sample) {
  if (!imu_.empty() && !(sample.t > imu_.back().t))
    throw std::invalid_argument("Estimator::add_imu: timestamps must increase");
  imu_.push_back(sample);
  if (!initialized_ || !(sample.t > ins_state_.t)) return;
  ins_state_ = mechanize_step(ins_state_, ins_sample_, sample, options_.gravity);
  ins_sample_ = sample;
  ins_.push(ins_state_);
}

void Estimator::reset_ins(const NavState& x) {
  ins_.clear();
  ins_.push(x);
  ins_state_ = x;
  auto it = std::upper_bound(imu_.begin(), imu_.end(), x.t,
                             [](double t, const ImuSample& s) { return t < s.t; });
  if (it == imu_.begin()) throw Error("Estimator: no IMU sample before the reset epoch");
  if (it == imu_.end()) {
    ins_sample_ = imu_.back();
    ins_sample_.t = x.t;
    return;
  }
  ins_sample_ = interpolate_imu(*(it - 1), *it, x.t);
  for (; it != imu_.end(); ++it) {
    ins_state_ = mechanize_step(ins_state_, ins_sample_, *it, options_.gravity);
    ins_sample_ = *it;
    ins_.push(ins_state_);
  }
}

void Estimator::initialize(double tau) {
  // The window opens at the last sample at or before tau - init_window.
  const double open = tau - options_.init_window;
  auto first = std::upper_bound(imu_.begin(), imu_.end(), open, [](double t, const ImuSample& s) { return t < s.t; });
  if (first != imu_.begin()) --first;
  std::vector<ImuSample> window;
  for (auto it = first; it != imu_.end() && it->t <= tau; ++it) window.push_back(*it);
  if (imu_.empty() || imu_.front().t > open || window.size() < 20)
    throw FrameSkipped("Estimator: not enough IMU history to initialize");
  if (!detect_zero_velocity(window, options_.static_detection))
    throw FrameSkipped("Estimator: platform is not static, cannot initialize");
  const Leveling lev = init_attitude_from_accel(window, options_.gravity.g.norm());
  NavState x;
  x.t = tau;
  x.q = Quat(euler_to_rotation(lev.roll, lev.pitch, 0.0));
  x.bg = estimate_gyro_bias_static(window, options_.static_detection);
  // The static mean is as good as white gyro noise averaged over the window.
  const double span = window.back().t - window.front().t;
  init_gyro_bias_sigma_ = std::min(options_.prior.gyro_bias, options_.imu_noise.gyro_noise / std::sqrt(span));
  reset_ins(x);
  initialized_ = true;
}

nlls::PriorFactor Estimator::initial_prior(const NavState& x) const {
  const auto& s = options_.prior;
  nlls::PriorFactor prior;
  append_prior(prior, state_key(window_.entries.back().id, 0), Manifold::kEuclidean, vec_values(x.p),
               diagonal_sqrt_info(3, s.position));
  // Attitude uncertainty is specified about heading-frame axes; the block's
  // tangent is the body-frame right perturbation.
  const Mat3 R = x.q.toRotationMatrix();
  const Mat3 H = Eigen::AngleAxisd(rotation_to_euler(R).z(), Vec3::UnitZ()).toRotationMatrix();
  const Vec3 var(s.roll_pitch * s.roll_pitch, s.roll_pitch * s.roll_pitch, s.yaw * s.yaw);
  const Mat3 cov_world = H * var.asDiagonal() * H.transpose();
  const Mat3 cov_body = R.transpose() * cov_world * R;
  const Mat3 info = cov_body.inverse();
  const Mat3 U = Eigen::LLT<Mat3>(info).matrixU();
  append_prior(prior, state_key(window_.entries.back().id, 1), Manifold::kQuaternion, quat_values(x.q), U);
  append_prior(prior, state_key(window_.entries.back().id, 2), Manifold::kEuclidean, vec_values(x.v),
               diagonal_sqrt_info(3, s.velocity));
  append_prior(prior, state_key(window_.entries.back().id, 3), Manifold::kEuclidean, vec_values(x.bg),
               diagonal_sqrt_info(3, init_gyro_bias_sigma_));
  append_prior(prior, state_key(window_.entries.back().id, 4), Manifold::kEuclidean, vec_values(x.ba),
               diagonal_sqrt_info(3, s.accel_bias));
  return prior;
}

std::vector<Vec3> Estimator::select_source(const LidarFrame& undistorted) const {
  const auto& pts = undistorted.points;
  const std::size_t m = std::min(options_.max_source_points, pts.size());
  std::vector<Vec3> out;
  out.reserve(m);
  for (std::size_t k = 0; k < m; ++k) out.push_back(pts[k * pts.size() / m].p);
  return out;
}

void Estimator::associate() {
  const Pose ext = window_.ext.pose();
  std::vector<AssociationTarget> targets;
  for (std::size_t i = 0; i + 1 < window_.entries.size(); ++i) {
    const auto& e = window_.entries[i];
    targets.push_back({i, e.map.get(), e.state.pose() * ext});
  }
  const auto& newest = window_.entries.back();
  auto fresh = associate_keyframe(newest.source, newest.state.pose() * ext, targets, options_.association);
  for (auto& a : fresh) {
    a.source = window_.entries.size() - 1;
    window_.associations.push_back(a);
  }
  window_.injected.resize(window_.associations.size(), false);
}

void Estimator::inject_outliers() {
  if (options_.outlier_fraction <= 0.0 || window_.associations.empty()) return;
  std::mt19937_64 rng(options_.outlier_seed * 1000003ULL + keyframe_count_);
  std::bernoulli_distribution pick(options_.outlier_fraction);
  auto& assoc = window_.associations;
  const Pose ext = window_.ext.pose();
  const Pose pose_n = window_.entries.back().state.pose() * ext;
  const std::size_t newest = window_.entries.size() - 1;
  const std::vector<PlaneAssociation> original = assoc;
  for (std::size_t k = 0; k < assoc.size(); ++k) {
    if (assoc[k].source != newest || !pick(rng)) continue;
    const Pose pose_i = window_.entries[assoc[k].target].state.pose() * ext;
    const Vec3 pi = project_point(assoc[k].p_r, pose_n, pose_i);
    const std::size_t start = std::uniform_int_distribution<std::size_t>(0, assoc.size() - 1)(rng);
    for (std::size_t j = 0; j < original.size(); ++j) {
      const auto& other = original[(start + j) % original.size()];
      if (other.source != newest || other.target != assoc[k].target) continue;
      if (std::abs(other.plane.distance(pi)) < 0.5) continue;
      assoc[k].plane = other.plane;
      window_.injected[k] = true;
      ++outliers_injected_;
      break;
    }
  }
}

void Estimator::update_calibration_gate() {
  const auto& e = window_.entries;
  if (e.size() >= 2) accumulated_rotation_ += quat_log(e[e.size() - 2].state.q.conjugate() * e.back().state.q).norm();
  const auto& c = options_.calibration;
  if (!c.enabled || calibration_active_) return;
  if (e.size() < options_.window_size + 1 || accumulated_rotation_ <= c.activation_rotation) return;
  calibration_active_ = true;
  window_.calibrate = true;
  append_prior(window_.prior, kExtPositionKey, Manifold::kEuclidean, vec_values(window_.ext.p),
               diagonal_sqrt_info(3, c.prior_translation));
  append_prior(window_.prior, kExtRotationKey, Manifold::kQuaternion, quat_values(window_.ext.q),
               diagonal_sqrt_info(3, c.prior_rotation));
  append_prior(window_.prior, kTimeDelayKey, Manifold::kEuclidean, {window_.td},
               diagonal_sqrt_info(1, c.prior_time_delay));
}

void Estimator::repropagate() {
  for (std::size_t k = 1; k < window_.entries.size(); ++k) {
    const NavState& prev = window_.entries[k - 1].state;
    auto& pre = window_.entries[k].pre;
    if ((prev.bg - pre->bg0()).norm() > options_.repropagate_gyro ||
        (prev.ba - pre->ba0()).norm() > options_.repropagate_accel)
      pre = std::make_shared<Preintegration>(pre->repropagated(prev.bg, prev.ba));
  }
}

FrameOutput Estimator::process_frame(const LidarFrame& frame) {
  if (frame.points.empty()) throw FrameSkipped("Estimator: empty frame");
  if (!initialized_) initialize(frame.stamp + window_.td);
  const double tau = frame.stamp + window_.td;
  double last_offset = 0.0;
  for (const auto& p : frame.points) last_offset = std::max(last_offset, p.t_offset);
  if (!ins_.covers(tau, tau + last_offset)) throw FrameSkipped("Estimator: INS does not cover the frame");

  LidarFrame filtered;
  filtered.stamp = frame.stamp;
  filtered.points = range_filter(frame.points, options_.range_gate);
  if (filtered.points.empty()) throw FrameSkipped("Estimator: no points inside the range gate");
  LidarFrame und = undistort_frame(filtered, ins_, window_.ext, window_.td);

  if (!window_.entries.empty()) {
    const NavState& last = window_.entries.back().state;
    const Pose now = ins_.pose(tau);
    const double translation = (now.p - last.p).norm();
    const double rotation = quat_log(last.q.conjugate() * now.q).norm();
    if (!select_keyframe(translation, rotation, tau - last.t, options_.keyframe)) {
      intermediates_.push_back(std::move(und));
      FrameOutput out;
      out.t = tau;
      out.stamp = frame.stamp;
      out.pose = now;
      out.ext = window_.ext;
      out.td = window_.td;
      return out;
    }
  }
  und.is_keyframe = true;
  return process_keyframe(und, tau);
}

FrameOutput Estimator::process_keyframe(const LidarFrame& und, double tau) {
  WindowEntry e;
  e.id = next_id_++;
  e.stamp = und.stamp;
  e.epoch.td_lin = window_.td;
  const bool first = window_.entries.empty();
  if (first) {
    e.state = ins_.query(tau);
  } else {
    const NavState& prev = window_.entries.back().state;
    const auto samples = imu_interval(imu_, prev.t, tau);
    e.pre = std::make_shared<Preintegration>(preintegrate(samples, prev.bg, prev.ba, options_.imu_noise));
    e.state = e.pre->predict(prev, options_.gravity);
  }
  {
    auto it = std::upper_bound(imu_.begin(), imu_.end(), tau, [](double t, const ImuSample& s) { return t < s.t; });
    const ImuSample g = (it == imu_.begin() || it == imu_.end()) ? imu_.back() : interpolate_imu(*(it - 1), *it, tau);
    e.epoch.omega = g.gyro - e.state.bg;
  }
  e.map = std::make_shared<KeyframeMap>(build_keyframe_map(e.id, und, intermediates_, ins_, window_.ext, window_.td,
                                                           options_.voxel_leaf));
  intermediates_.clear();
  e.source = select_source(und);
  window_.entries.push_back(std::move(e));
  if (first) window_.prior = initial_prior(window_.entries.back().state);

  update_calibration_gate();
  associate();
  inject_outliers();
  ++keyframe_count_;

  OptimizationReport report = optimize_window(window_, options_);
  repropagate();
  // Culled factors never come back.
  std::vector<PlaneAssociation> survivors;
  std::vector<bool> survivors_injected;
  for (std::size_t k = 0; k < window_.associations.size(); ++k) {
    if (!report.kept[k]) continue;
    survivors.push_back(window_.associations[k]);
    survivors_injected.push_back(window_.injected[k]);
  }
  window_.associations = std::move(survivors);
  window_.injected = std::move(survivors_injected);
  if (window_.entries.size() > options_.window_size) marginalize_and_slide(window_, options_.gravity, {});

  const NavState& x = window_.entries.back().state;
  reset_ins(x);
  // Keep the last sample at or before the newest keyframe for the next interval.
  auto it = std::upper_bound(imu_.begin(), imu_.end(), x.t, [](double t, const ImuSample& s) { return t < s.t; });
  if (it != imu_.begin()) imu_.erase(imu_.begin(), it - 1);

  FrameOutput out;
  out.t = x.t;
  out.stamp = und.stamp;
  out.pose = x.pose();
  out.keyframe = true;
  out.ext = window_.ext;
  out.td = window_.td;
  out.report = std::move(report);
  return out;
}

}  // namespace f2f
