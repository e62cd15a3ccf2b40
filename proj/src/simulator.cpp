#include "f2f/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace f2f {

PlaneSurface make_plane(const Vec3& center, const Vec3& normal, const Vec3& axis_hint, double half_u,
                        double half_v) {
  PlaneSurface s;
  s.center = center;
  s.normal = normal.normalized();
  s.axis_u = (axis_hint - s.normal.dot(axis_hint) * s.normal).normalized();
  s.half_u = half_u;
  s.half_v = half_v;
  return s;
}

std::optional<RayHit> raycast(const PlaneWorld& world, const Vec3& origin, const Vec3& dir, double max_range) {
  std::optional<RayHit> best;
  for (std::size_t k = 0; k < world.planes.size(); ++k) {
    const PlaneSurface& s = world.planes[k];
    const double denom = s.normal.dot(dir);
    if (std::abs(denom) < 1e-9) continue;
    const double range = s.normal.dot(s.center - origin) / denom;
    if (!(range > 0.0) || range > max_range) continue;
    if (best && range >= best->range) continue;
    const Vec3 rel = origin + range * dir - s.center;
    const Vec3 axis_v = s.normal.cross(s.axis_u);
    if (std::abs(rel.dot(s.axis_u)) > s.half_u || std::abs(rel.dot(axis_v)) > s.half_v) continue;
    best = RayHit{range, static_cast<int>(k)};
  }
  return best;
}

namespace {

/// Value and first two derivatives of a scalar function of time.
struct D2 {
  double f = 0.0, d = 0.0, dd = 0.0;
};

/// Quintic smoothstep of u = tau / T clamped to [0, 1], differentiated in tau.
D2 smoothstep(double tau, double T) {
  if (T <= 0.0) return {tau >= 0.0 ? 1.0 : 0.0, 0.0, 0.0};
  const double u = tau / T;
  if (u <= 0.0) return {};
  if (u >= 1.0) return {1.0, 0.0, 0.0};
  return {u * u * u * (u * (6.0 * u - 15.0) + 10.0), 30.0 * u * u * (u - 1.0) * (u - 1.0) / T,
          (120.0 * u * u * u - 180.0 * u * u + 60.0 * u) / (T * T)};
}

/// Integral of the smoothstep from 0 to tau.
double smoothstep_integral(double tau, double T) {
  if (tau <= 0.0) return 0.0;
  if (T <= 0.0) return tau;
  const double u = tau / T;
  if (u >= 1.0) return 0.5 * T + (tau - T);
  return T * u * u * u * u * (u * (u - 3.0) + 2.5);
}

D2 product(const D2& a, const D2& b) {
  return {a.f * b.f, a.d * b.f + a.f * b.d, a.dd * b.f + 2.0 * a.d * b.d + a.f * b.dd};
}

D2 sine(double amp, double omega, double phase, double tau) {
  const double x = omega * tau + phase;
  return {amp * std::sin(x), amp * omega * std::cos(x), -amp * omega * omega * std::sin(x)};
}

using Vec2 = Eigen::Vector2d;

struct PathPoint {
  Vec2 c, d1, d2;
};

class PathTrajectory : public Trajectory {
 public:
  explicit PathTrajectory(const PathTrajectorySpec& spec) : spec_(spec) {
    // Parameter rate that gives the nominal speed on average.
    double mean_norm = 0.0;
    constexpr int kSamples = 720;
    for (int k = 0; k < kSamples; ++k) mean_norm += path(2.0 * kPi * k / kSamples).d1.norm();
    rate_ = spec.speed / (mean_norm / kSamples);
    turn_end_ = turn_point(spec_.size_b);
  }

  double duration() const override { return spec_.duration; }

  TrajectoryPoint at(double t) const override {
    const double tau = t - spec_.static_time;
    const D2 ramp = smoothstep(tau, spec_.ramp_time);
    const D2 s = warp(tau, ramp);

    const PathPoint pp = path(s.f);
    TrajectoryPoint out;
    out.t = t;
    const D2 bob = tau > 0.0 ? product(ramp, sine(spec_.bob, 2.0 * kPi * spec_.bob_freq, 0.0, tau)) : D2{};
    out.p = spec_.origin + Vec3(pp.c.x(), pp.c.y(), bob.f);
    out.v = Vec3(pp.d1.x() * s.d, pp.d1.y() * s.d, bob.d);
    const Vec2 a = pp.d2 * s.d * s.d + pp.d1 * s.dd;
    out.a = Vec3(a.x(), a.y(), bob.dd);

    const double yaw = std::atan2(pp.d1.y(), pp.d1.x());
    const double yaw_rate = s.d * (pp.d1.x() * pp.d2.y() - pp.d1.y() * pp.d2.x()) / pp.d1.squaredNorm();
    const double wf = 2.0 * kPi * spec_.wobble_freq;
    const D2 roll = tau > 0.0 ? product(ramp, sine(spec_.wobble, wf, 0.0, tau)) : D2{};
    const D2 pitch = tau > 0.0 ? product(ramp, sine(0.7 * spec_.wobble, 1.37 * wf, 0.9, tau)) : D2{};
    out.q = Quat(euler_to_rotation(roll.f, pitch.f, yaw)).normalized();
    const double sr = std::sin(roll.f), cr = std::cos(roll.f);
    const double sp = std::sin(pitch.f), cp = std::cos(pitch.f);
    out.omega = Vec3(roll.d - yaw_rate * sp, pitch.d * cr + yaw_rate * sr * cp, -pitch.d * sr + yaw_rate * cr * cp);
    return out;
  }

 private:
  D2 warp(double tau, const D2& ramp) const {
    if (tau < 0.0) return {};
    const double w = 2.0 * kPi * spec_.speed_mod_freq;
    const double x = w * tau;
    const double sx = std::sin(x), cx = std::cos(x);
    const double m = spec_.speed_mod;
    D2 s;
    s.f = rate_ * (smoothstep_integral(tau, spec_.ramp_time) + m * ((-cx + cx * cx * cx / 3.0) + 2.0 / 3.0) / w);
    s.d = rate_ * (ramp.f + m * sx * sx * sx);
    s.dd = rate_ * (ramp.d + m * 3.0 * sx * sx * cx * w);
    return s;
  }

  PathPoint path(double s) const {
    const double A = spec_.size_a, B = spec_.size_b;
    switch (spec_.kind) {
      case PathKind::kCircle: {
        const double th = s / A;
        return {Vec2(A * std::sin(th), A * (1.0 - std::cos(th))), Vec2(std::cos(th), std::sin(th)),
                Vec2(-std::sin(th), std::cos(th)) / A};
      }
      case PathKind::kFigureEight:
        return {Vec2(A * std::sin(s), 0.5 * B * std::sin(2.0 * s)), Vec2(A * std::cos(s), B * std::cos(2.0 * s)),
                Vec2(-A * std::sin(s), -2.0 * B * std::sin(2.0 * s))};
      case PathKind::kOutAndBack:
        return out_and_back(s);
    }
    return {};
  }

  /// Straight leg of length A, smooth U-turn of length B, straight return.
  double heading(double s, double* rate) const {
    const D2 h = smoothstep(s - spec_.size_a, spec_.size_b);
    if (rate != nullptr) *rate = kPi * h.d;
    return kPi * h.f;
  }

  Vec2 turn_point(double len) const {
    // Composite Gauss-Legendre over the turn section [A, A + len].
    static const double x[4] = {-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526};
    static const double w[4] = {0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538};
    Vec2 acc(spec_.size_a, 0.0);
    if (len <= 0.0) return acc;
    const int segments = std::max(1, static_cast<int>(std::ceil(len / 0.05)));
    const double h = len / segments;
    for (int k = 0; k < segments; ++k) {
      const double mid = spec_.size_a + (k + 0.5) * h;
      for (int j = 0; j < 4; ++j) {
        const double psi = heading(mid + 0.5 * h * x[j], nullptr);
        acc += 0.5 * h * w[j] * Vec2(std::cos(psi), std::sin(psi));
      }
    }
    return acc;
  }

  PathPoint out_and_back(double s) const {
    double rate = 0.0;
    const double psi = heading(s, &rate);
    const Vec2 t(std::cos(psi), std::sin(psi));
    const Vec2 n(-std::sin(psi), std::cos(psi));
    Vec2 c;
    if (s <= spec_.size_a) {
      c = Vec2(s, 0.0);
    } else if (s >= spec_.size_a + spec_.size_b) {
      c = turn_end_ + (s - spec_.size_a - spec_.size_b) * t;
    } else {
      c = turn_point(s - spec_.size_a);
    }
    return {c, t, rate * n};
  }

  PathTrajectorySpec spec_;
  double rate_ = 1.0;
  Vec2 turn_end_ = Vec2::Zero();
};

class StaticTrajectory : public Trajectory {
 public:
  StaticTrajectory(const Pose& pose, double duration) : pose_(pose), duration_(duration) {}
  double duration() const override { return duration_; }
  TrajectoryPoint at(double t) const override {
    TrajectoryPoint out;
    out.t = t;
    out.p = pose_.p;
    out.q = pose_.q;
    return out;
  }

 private:
  Pose pose_;
  double duration_;
};

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

std::shared_ptr<const Trajectory> make_path_trajectory(const PathTrajectorySpec& spec) {
  return std::make_shared<PathTrajectory>(spec);
}

std::shared_ptr<const Trajectory> make_static_trajectory(const Pose& pose, double duration) {
  return std::make_shared<StaticTrajectory>(pose, duration);
}

std::shared_ptr<const Trajectory> make_circle_trajectory(double radius, double speed, double duration) {
  PathTrajectorySpec spec;
  spec.kind = PathKind::kCircle;
  spec.size_a = radius;
  spec.speed = speed;
  spec.duration = duration;
  spec.static_time = 0.0;
  spec.ramp_time = 0.0;
  spec.speed_mod = 0.0;
  spec.wobble = 0.0;
  spec.bob = 0.0;
  return std::make_shared<PathTrajectory>(spec);
}

// ---------------------------------------------------------------------------
// Sensors

ImuSynthesis synth_imu(const Trajectory& traj, const SensorRig& rig, std::uint64_t seed) {
  ImuSynthesis out;
  const double dt = 1.0 / rig.imu_rate;
  const auto n = static_cast<std::size_t>(std::floor(traj.duration() * rig.imu_rate + 1e-9)) + 1;
  out.samples.reserve(n);
  out.truth.reserve(n);
  auto rng = make_rng(seed, 1, 0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto noise3 = [&](double sigma) { return Vec3(sigma * gauss(rng), sigma * gauss(rng), sigma * gauss(rng)); };

  Vec3 bg = rig.bg0, ba = rig.ba0;
  const auto& nz = rig.imu_noise;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * dt;
    const TrajectoryPoint tp = traj.at(t);
    ImuSample s;
    s.t = t;
    s.gyro = tp.omega + bg;
    s.accel = tp.q.conjugate() * (tp.a - rig.gravity.g) + ba;
    if (rig.imu_noise_on) {
      s.gyro += noise3(nz.gyro_noise / std::sqrt(dt));
      s.accel += noise3(nz.accel_noise / std::sqrt(dt));
    }
    out.samples.push_back(s);
    NavState x;
    x.t = t;
    x.p = tp.p;
    x.q = tp.q;
    x.v = tp.v;
    x.bg = bg;
    x.ba = ba;
    out.truth.push_back(x);
    if (rig.imu_noise_on) {
      bg += noise3(nz.gyro_walk * std::sqrt(dt));
      ba += noise3(nz.accel_walk * std::sqrt(dt));
    }
  }
  return out;
}

std::vector<std::pair<double, Vec3>> rosette_rays(const SensorRig& rig, double stamp) {
  std::vector<std::pair<double, Vec3>> rays;
  const int n = rig.points_per_frame;
  rays.reserve(static_cast<std::size_t>(n));
  const double period = 1.0 / rig.lidar_rate;
  for (int k = 0; k < n; ++k) {
    const double t_off = period * k / n;
    const double t = stamp + t_off;
    const double theta = rig.fov_half * std::sin(2.0 * kPi * rig.rosette_f1 * t);
    const double phi = 2.0 * kPi * rig.rosette_f2 * t;
    rays.emplace_back(t_off, Vec3(std::cos(theta), std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi)));
  }
  return rays;
}

SimFrame synth_lidar_frame(const Trajectory& traj, const PlaneWorld& world, const SensorRig& rig, double stamp,
                           std::uint64_t seed) {
  SimFrame out;
  out.frame.stamp = stamp;
  auto rng = make_rng(seed, 2, static_cast<std::uint64_t>(std::llround(stamp * 1e6)));
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Pose ext = rig.ext.pose();
  for (const auto& [t_off, dir] : rosette_rays(rig, stamp)) {
    const TrajectoryPoint tp = traj.at((stamp + rig.td) + t_off);
    const Pose T_wr = Pose{tp.p, tp.q} * ext;
    const Vec3 dir_w = T_wr.q * dir;
    const double noise = rig.range_noise > 0.0 ? rig.range_noise * gauss(rng) : 0.0;
    const auto hit = raycast(world, T_wr.p, dir_w, rig.max_range);
    if (!hit) continue;
    const double range = hit->range + noise;
    if (range < rig.range_gate.min || range > rig.range_gate.max) continue;
    out.frame.points.push_back({t_off, range * dir});
    out.labels.push_back(hit->plane);
  }
  return out;
}

std::vector<SimFrame> synth_lidar(const Trajectory& traj, const PlaneWorld& world, const SensorRig& rig,
                                  std::uint64_t seed) {
  std::vector<SimFrame> frames;
  const double period = 1.0 / rig.lidar_rate;
  for (int k = 0;; ++k) {
    const double stamp = rig.lidar_start + k * period;
    if (stamp + rig.td < 0.0) continue;
    if (stamp + period + rig.td > traj.duration()) break;
    frames.push_back(synth_lidar_frame(traj, world, rig, stamp, seed));
  }
  return frames;
}

// ---------------------------------------------------------------------------
// Scenarios

std::vector<StampedPose> Scenario::truth() const {
  std::vector<StampedPose> out;
  out.reserve(imu.truth.size());
  for (const auto& x : imu.truth) out.push_back({x.t, x.pose()});
  return out;
}

double Scenario::distance() const {
  double d = 0.0;
  for (std::size_t k = 1; k < imu.truth.size(); ++k) d += (imu.truth[k].p - imu.truth[k - 1].p).norm();
  return d;
}

std::vector<std::string> scenario_names() { return {"corridor", "room-orbit", "figure-eight"}; }

namespace {

/// Axis-aligned box room: floor at z = +1 below the start height, a ceiling
/// tilted about the floor diagonal and four walls.
PlaneWorld box_room(const Vec3& center, double size_x, double size_y, double ceiling_height, double tilt) {
  PlaneWorld w;
  const double floor_z = 1.0;
  const double hx = 0.5 * size_x, hy = 0.5 * size_y;
  const double big = std::max(hx, hy) + 2.0;
  w.planes.push_back(make_plane(Vec3(center.x(), center.y(), floor_z), Vec3::UnitZ(), Vec3::UnitX(), big, big));
  const Vec3 diag = Vec3(size_x, size_y, 0.0).normalized();
  const Vec3 ceil_n = Eigen::AngleAxisd(tilt, diag) * Vec3::UnitZ();
  w.planes.push_back(
      make_plane(Vec3(center.x(), center.y(), floor_z - ceiling_height), ceil_n, Vec3::UnitX(), big, big));
  const double wall_half = ceiling_height + 8.0;
  const double zc = floor_z;
  w.planes.push_back(make_plane(Vec3(center.x() + hx, center.y(), zc), Vec3::UnitX(), Vec3::UnitY(), hy + 1, wall_half));
  w.planes.push_back(make_plane(Vec3(center.x() - hx, center.y(), zc), Vec3::UnitX(), Vec3::UnitY(), hy + 1, wall_half));
  w.planes.push_back(make_plane(Vec3(center.x(), center.y() + hy, zc), Vec3::UnitY(), Vec3::UnitX(), hx + 1, wall_half));
  w.planes.push_back(make_plane(Vec3(center.x(), center.y() - hy, zc), Vec3::UnitY(), Vec3::UnitX(), hx + 1, wall_half));
  return w;
}

PlaneWorld corridor_world() {
  PlaneWorld w;
  const double x0 = -6.0, x1 = 34.0;
  const double xc = 0.5 * (x0 + x1), hx = 0.5 * (x1 - x0) + 2.0;
  // Floor 1 m below the path.
  w.planes.push_back(make_plane(Vec3(xc, 2.0, 1.0), Vec3::UnitZ(), Vec3::UnitX(), hx, 12.0));
  // Ceiling descending along the corridor: z = -7 + 0.15 (x - x0) + 0.03 y.
  const Vec3 ceil_n = Vec3(-0.15, -0.03, 1.0).normalized();
  const Vec3 ceil_c(xc, 2.0, -7.0 + 0.15 * (xc - x0) + 0.03 * 2.0);
  w.planes.push_back(make_plane(ceil_c, ceil_n, Vec3::UnitX(), hx + 1.0, 12.0));
  // Walls converging towards the far end: y = -1.2 - 0.12 (28 - x) and y = 5.8 + 0.12 (28 - x).
  const Vec3 left_n = Vec3(-0.12, 1.0, 0.0).normalized();
  const Vec3 right_n = Vec3(0.12, 1.0, 0.0).normalized();
  w.planes.push_back(make_plane(Vec3(xc, -1.2 - 0.12 * (28.0 - xc), -2.0), left_n, Vec3::UnitX(), hx, 12.0));
  w.planes.push_back(make_plane(Vec3(xc, 5.8 + 0.12 * (28.0 - xc), -2.0), right_n, Vec3::UnitX(), hx, 12.0));
  return w;
}

}  // namespace

Scenario make_scenario(const std::string& name, std::uint64_t seed, const ScenarioOptions& options) {
  Scenario sc;
  sc.name = name;
  sc.seed = seed;
  PathTrajectorySpec spec;
  if (name == "corridor") {
    sc.world = corridor_world();
    spec.kind = PathKind::kOutAndBack;
    spec.size_a = 25.0;
    spec.size_b = 6.0;
    spec.speed = 1.45;
    spec.duration = 37.0;
  } else if (name == "room-orbit") {
    sc.world = box_room(Vec3(0.0, 4.0, 0.0), 16.0, 16.0, 2.5, 10.0 * kDegToRad);
    spec.kind = PathKind::kCircle;
    spec.size_a = 4.0;
    spec.speed = 1.5;
    spec.duration = 60.0;
  } else if (name == "figure-eight") {
    sc.world = box_room(Vec3::Zero(), 24.0, 16.0, 2.5, 10.0 * kDegToRad);
    spec.kind = PathKind::kFigureEight;
    spec.size_a = 9.0;
    spec.size_b = 10.0;
    spec.speed = 1.5;
    spec.duration = 120.0;
  } else {
    throw std::invalid_argument("make_scenario: unknown scenario '" + name + "'");
  }
  if (options.duration) spec.duration = *options.duration;
  sc.trajectory = make_path_trajectory(spec);

  sc.rig.ext = options.ext;
  sc.rig.td = options.td;
  if (options.points_per_frame) sc.rig.points_per_frame = *options.points_per_frame;
  if (options.noise) {
    auto rng = make_rng(seed, 3, 0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    sc.rig.bg0 = 5e-4 * Vec3(gauss(rng), gauss(rng), gauss(rng));
    sc.rig.ba0 = 0.02 * Vec3(gauss(rng), gauss(rng), gauss(rng));
  } else {
    sc.rig.imu_noise_on = false;
    sc.rig.range_noise = 0.0;
  }
  sc.imu = synth_imu(*sc.trajectory, sc.rig, seed);
  sc.lidar = synth_lidar(*sc.trajectory, sc.world, sc.rig, seed);
  return sc;
}

}  // namespace f2f
