#include "f2f/io.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>

#include "f2f/error.hpp"

namespace f2f {

namespace fs = std::filesystem;

namespace {

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x + 0.0);  // no "-0"
  return buf;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

/// Numbers on one line; false for blank and comment lines.
bool parse_numbers(const std::string& line, std::size_t expected, std::vector<double>& out, const fs::path& path,
                   std::size_t line_no) {
  const std::string body = line.substr(0, line.find('#'));
  std::istringstream ss(body);
  out.clear();
  std::string tok;
  while (ss >> tok) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size())
      throw Error(path.string() + ":" + std::to_string(line_no) + ": not a number '" + tok + "'");
    out.push_back(v);
  }
  if (out.empty()) return false;
  if (out.size() != expected)
    throw Error(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(expected) +
                " values, got " + std::to_string(out.size()));
  return true;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<ImuSample> load_imu(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::vector<ImuSample> out;
  std::string line;
  std::vector<double> v;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (!parse_numbers(line, 7, v, path, n)) continue;
    ImuSample s;
    s.t = v[0];
    s.gyro = Vec3(v[1], v[2], v[3]);
    s.accel = Vec3(v[4], v[5], v[6]);
    if (!out.empty() && !(s.t > out.back().t))
      throw Error(path.string() + ":" + std::to_string(n) + ": timestamps must strictly increase");
    out.push_back(s);
  }
  return out;
}

void save_imu(const fs::path& path, const std::vector<ImuSample>& samples) {
  std::ofstream out = open_out(path);
  out << "# t wx wy wz ax ay az\n";
  for (const auto& s : samples)
    out << fmt(s.t) << ' ' << fmt(s.gyro.x()) << ' ' << fmt(s.gyro.y()) << ' ' << fmt(s.gyro.z()) << ' '
        << fmt(s.accel.x()) << ' ' << fmt(s.accel.y()) << ' ' << fmt(s.accel.z()) << '\n';
}

std::vector<LidarFrame> load_lidar(const fs::path& dir, double frame_period, std::vector<std::string>* warnings) {
  if (!fs::is_directory(dir)) throw Error("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  std::vector<std::pair<long long, fs::path>> stamped;
  for (const auto& f : files) {
    const std::string stem = f.stem().string();
    std::size_t used = 0;
    long long ns = 0;
    try {
      ns = std::stoll(stem, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (stem.empty() || used != stem.size()) throw Error("frame file name is not a nanosecond stamp: " + f.string());
    stamped.emplace_back(ns, f);
  }
  const bool ordered = std::is_sorted(stamped.begin(), stamped.end(),
                                      [](const auto& a, const auto& b) { return a.first < b.first; });
  if (!ordered) {
    std::stable_sort(stamped.begin(), stamped.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    if (warnings) warnings->push_back("frame files in " + dir.string() + " were out of order; reordered by stamp");
  }

  std::vector<LidarFrame> frames;
  std::vector<double> v;
  for (const auto& [ns, f] : stamped) {
    LidarFrame frame;
    frame.stamp = static_cast<double>(ns) * 1e-9;
    std::ifstream in = open_in(f);
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
      if (!parse_numbers(line, 4, v, f, n)) continue;
      if (v[0] < 0.0 || v[0] >= frame_period)
        throw Error(f.string() + ":" + std::to_string(n) + ": t_offset outside the frame period");
      frame.points.push_back({v[0], Vec3(v[1], v[2], v[3])});
    }
    frames.push_back(std::move(frame));
  }
  return frames;
}

void save_lidar(const fs::path& dir, const std::vector<LidarFrame>& frames) {
  fs::create_directories(dir);
  for (const auto& frame : frames) {
    const long long ns = std::llround(frame.stamp * 1e9);
    // Zero padding keeps name order equal to stamp order.
    char name[32];
    std::snprintf(name, sizeof(name), "%019lld.txt", ns);
    std::ofstream out = open_out(dir / name);
    for (const auto& p : frame.points)
      out << fmt(p.t_offset) << ' ' << fmt(p.p.x()) << ' ' << fmt(p.p.y()) << ' ' << fmt(p.p.z()) << '\n';
  }
}

std::vector<TrajectoryRecord> load_trajectory(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::vector<TrajectoryRecord> out;
  std::string line;
  std::vector<double> v;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (!parse_numbers(line, 8, v, path, n)) continue;
    TrajectoryRecord r;
    r.t = v[0];
    r.pose.p = Vec3(v[1], v[2], v[3]);
    r.pose.q = Quat(v[7], v[4], v[5], v[6]);
    if (std::abs(r.pose.q.norm() - 1.0) > 1e-6)
      throw Error(path.string() + ":" + std::to_string(n) + ": quaternion is not unit");
    r.pose.q.normalize();
    if (!out.empty() && !(r.t > out.back().t))
      throw Error(path.string() + ":" + std::to_string(n) + ": timestamps must strictly increase");
    out.push_back(r);
  }
  return out;
}

void save_trajectory(const fs::path& path, const std::vector<TrajectoryRecord>& records) {
  std::ofstream out = open_out(path);
  out << "# t px py pz qx qy qz qw\n";
  for (const auto& r : records) {
    const Quat q = canonical(r.pose.q);
    out << fmt(r.t) << ' ' << fmt(r.pose.p.x()) << ' ' << fmt(r.pose.p.y()) << ' ' << fmt(r.pose.p.z()) << ' '
        << fmt(q.x()) << ' ' << fmt(q.y()) << ' ' << fmt(q.z()) << ' ' << fmt(q.w()) << '\n';
  }
}

void save_attitude_std(const fs::path& path, const std::vector<AttitudeStdRecord>& records) {
  std::ofstream out = open_out(path);
  out << "# t roll_std pitch_std yaw_std (deg)\n";
  for (const auto& r : records)
    out << fmt(r.t) << ' ' << fmt(r.std.roll) << ' ' << fmt(r.std.pitch) << ' ' << fmt(r.std.yaw) << '\n';
}

void save_calibration(const fs::path& path, const std::vector<CalibrationRecord>& records) {
  std::ofstream out = open_out(path);
  out << "# t ex_deg ey_deg ez_deg px py pz td_ms\n";
  for (const auto& r : records) {
    const Vec3 e = rotation_to_euler(r.ext.q.toRotationMatrix()) * kRadToDeg;
    out << fmt(r.t) << ' ' << fmt(e.x()) << ' ' << fmt(e.y()) << ' ' << fmt(e.z()) << ' ' << fmt(r.ext.p.x()) << ' '
        << fmt(r.ext.p.y()) << ' ' << fmt(r.ext.p.z()) << ' ' << fmt(r.td * 1e3) << '\n';
  }
}

std::map<std::string, std::string> load_key_values(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::map<std::string, std::string> kv;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    const std::string body = trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw Error(path.string() + ":" + std::to_string(n) + ": expected key = value");
    const std::string key = trim(body.substr(0, eq));
    if (key.empty()) throw Error(path.string() + ":" + std::to_string(n) + ": empty key");
    kv[key] = trim(body.substr(eq + 1));
  }
  return kv;
}

RunConfig load_config(const fs::path& path) {
  auto kv = load_key_values(path);
  const fs::path base = path.parent_path();
  RunConfig c;
  auto take = [&](const std::string& key) -> std::optional<std::string> {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto number = [&](const std::string& key, double& target) {
    if (auto v = take(key)) {
      std::size_t used = 0;
      try {
        target = std::stod(*v, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != v->size()) throw Error(path.string() + ": '" + key + "' is not a number");
    }
  };
  auto file = [&](const std::string& key, fs::path& target) {
    if (auto v = take(key)) target = fs::path(*v).is_absolute() ? fs::path(*v) : base / *v;
  };
  file("imu", c.imu);
  file("lidar", c.lidar);
  file("truth", c.truth);
  file("output", c.output);
  if (c.imu.empty() || c.lidar.empty() || c.output.empty())
    throw Error(path.string() + ": imu, lidar and output are required");

  auto& e = c.estimator;
  number("lidar_period", c.lidar_period);
  number("gyro_noise", e.imu_noise.gyro_noise);
  number("accel_noise", e.imu_noise.accel_noise);
  number("gyro_walk", e.imu_noise.gyro_walk);
  number("accel_walk", e.imu_noise.accel_walk);
  number("keyframe_translation", e.keyframe.translation);
  double rot_deg = e.keyframe.rotation * kRadToDeg;
  number("keyframe_rotation_deg", rot_deg);
  e.keyframe.rotation = rot_deg * kDegToRad;
  number("keyframe_interval", e.keyframe.interval);
  number("lidar_sigma", e.association.sigma);
  Vec3 euler = rotation_to_euler(e.initial_extrinsics.q.toRotationMatrix()) * kRadToDeg;
  number("ext_roll_deg", euler.x());
  number("ext_pitch_deg", euler.y());
  number("ext_yaw_deg", euler.z());
  e.initial_extrinsics.q = Quat(euler_to_rotation(euler.x() * kDegToRad, euler.y() * kDegToRad, euler.z() * kDegToRad));
  number("ext_px", e.initial_extrinsics.p.x());
  number("ext_py", e.initial_extrinsics.p.y());
  number("ext_pz", e.initial_extrinsics.p.z());
  number("td", e.initial_time_delay);
  number("outlier_fraction", e.outlier_fraction);
  if (auto v = take("calibrate")) {
    if (*v == "true" || *v == "1" || *v == "on")
      e.calibration.enabled = true;
    else if (*v == "false" || *v == "0" || *v == "off")
      e.calibration.enabled = false;
    else
      throw Error(path.string() + ": 'calibrate' must be true or false");
  }
  double seed = static_cast<double>(e.outlier_seed);
  number("seed", seed);
  if (seed < 0.0) throw Error(path.string() + ": 'seed' must be non-negative");
  e.outlier_seed = static_cast<std::uint64_t>(seed);
  if (!(c.lidar_period > 0.0)) throw Error(path.string() + ": 'lidar_period' must be positive");
  if (!(e.association.sigma > 0.0)) throw Error(path.string() + ": 'lidar_sigma' must be positive");
  if (!kv.empty()) throw Error(path.string() + ": unknown key '" + kv.begin()->first + "'");
  return c;
}

void save_config(const fs::path& path, const RunConfig& c) {
  std::ofstream out = open_out(path);
  const auto& e = c.estimator;
  const Vec3 euler = rotation_to_euler(e.initial_extrinsics.q.toRotationMatrix()) * kRadToDeg;
  out << "imu = " << c.imu.string() << '\n' << "lidar = " << c.lidar.string() << '\n';
  if (!c.truth.empty()) out << "truth = " << c.truth.string() << '\n';
  out << "output = " << c.output.string() << '\n'
      << "lidar_period = " << fmt(c.lidar_period) << '\n'
      << "gyro_noise = " << fmt(e.imu_noise.gyro_noise) << '\n'
      << "accel_noise = " << fmt(e.imu_noise.accel_noise) << '\n'
      << "gyro_walk = " << fmt(e.imu_noise.gyro_walk) << '\n'
      << "accel_walk = " << fmt(e.imu_noise.accel_walk) << '\n'
      << "keyframe_translation = " << fmt(e.keyframe.translation) << '\n'
      << "keyframe_rotation_deg = " << fmt(e.keyframe.rotation * kRadToDeg) << '\n'
      << "keyframe_interval = " << fmt(e.keyframe.interval) << '\n'
      << "lidar_sigma = " << fmt(e.association.sigma) << '\n'
      << "ext_roll_deg = " << fmt(euler.x()) << '\n'
      << "ext_pitch_deg = " << fmt(euler.y()) << '\n'
      << "ext_yaw_deg = " << fmt(euler.z()) << '\n'
      << "ext_px = " << fmt(e.initial_extrinsics.p.x()) << '\n'
      << "ext_py = " << fmt(e.initial_extrinsics.p.y()) << '\n'
      << "ext_pz = " << fmt(e.initial_extrinsics.p.z()) << '\n'
      << "td = " << fmt(e.initial_time_delay) << '\n'
      << "calibrate = " << (e.calibration.enabled ? "true" : "false") << '\n'
      << "outlier_fraction = " << fmt(e.outlier_fraction) << '\n'
      << "seed = " << e.outlier_seed << '\n';
}

}  // namespace f2f
