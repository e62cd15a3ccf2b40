#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "f2f/error.hpp"
#include "f2f/evaluate.hpp"
#include "f2f/io.hpp"
#include "f2f/pipeline.hpp"
#include "f2f/simulator.hpp"

using namespace f2f;
namespace fs = std::filesystem;

namespace {

/// Fresh scratch directory under the system temp path.
fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("f2f_test_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

std::vector<TrajectoryRecord> line_trajectory(std::size_t n) {
  std::vector<TrajectoryRecord> out;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = 0.1 * static_cast<double>(k);
    out.push_back({t, Pose{Vec3(t, 0.5 * t, 0.0), quat_exp(Vec3(0.0, 0.0, 0.2 * t))}});
  }
  return out;
}

}  // namespace

TEST_CASE("empty IMU file loads as no samples") {
  const fs::path dir = scratch("imu_empty");
  write_text(dir / "imu.txt", "# only a comment\n\n");
  CHECK(load_imu(dir / "imu.txt").empty());
}

TEST_CASE("IMU write then read round trip") {
  const fs::path dir = scratch("imu_round_trip");
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<ImuSample> samples;
  for (int k = 0; k < 200; ++k)
    samples.push_back({0.005 * k + 1e-7 * n(rng), Vec3(n(rng), n(rng), n(rng)), Vec3(n(rng), n(rng), n(rng))});
  save_imu(dir / "imu.txt", samples);
  const auto back = load_imu(dir / "imu.txt");
  REQUIRE(back.size() == samples.size());
  for (std::size_t k = 0; k < samples.size(); ++k) {
    CHECK(std::abs(back[k].t - samples[k].t) < 1e-9);
    CHECK((back[k].gyro - samples[k].gyro).norm() < 1e-9);
    CHECK((back[k].accel - samples[k].accel).norm() < 1e-9);
  }
}

TEST_CASE("IMU loader rejects duplicated stamps and malformed lines") {
  const fs::path dir = scratch("imu_bad");
  write_text(dir / "dup.txt", "0.0 0 0 0 0 0 -9.8\n0.0 0 0 0 0 0 -9.8\n");
  CHECK_THROWS_AS(load_imu(dir / "dup.txt"), Error);
  write_text(dir / "short.txt", "0.0 0 0 0 0 0 -9.8\n0.005 0 0 0 0 0\n");
  try {
    load_imu(dir / "short.txt");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  write_text(dir / "word.txt", "0.0 0 0 zero 0 0 -9.8\n");
  CHECK_THROWS_AS(load_imu(dir / "word.txt"), Error);
}

TEST_CASE("single LiDAR frame with three points") {
  const fs::path dir = scratch("lidar_single");
  fs::create_directories(dir / "lidar");
  write_text(dir / "lidar" / "1500000000.txt", "0.0 1 2 3\n0.01 4 5 6\n# note\n0.09 7 8 9\n");
  const auto frames = load_lidar(dir / "lidar", 0.1);
  REQUIRE(frames.size() == 1);
  CHECK(frames[0].stamp == doctest::Approx(1.5).epsilon(1e-15));
  REQUIRE(frames[0].points.size() == 3);
  CHECK(frames[0].points[2].p == Vec3(7.0, 8.0, 9.0));
}

TEST_CASE("LiDAR point outside the frame period is rejected") {
  const fs::path dir = scratch("lidar_period");
  fs::create_directories(dir / "lidar");
  write_text(dir / "lidar" / "100000000.txt", "0.1 1 2 3\n");
  CHECK_THROWS_AS(load_lidar(dir / "lidar", 0.1), Error);
}

TEST_CASE("out-of-order frame files are reordered with a warning") {
  const fs::path dir = scratch("lidar_order");
  fs::create_directories(dir / "lidar");
  // Lexicographic order puts the later stamp first.
  write_text(dir / "lidar" / "900000000.txt", "0.0 1 0 0\n");
  write_text(dir / "lidar" / "1000000000.txt", "0.0 2 0 0\n");
  std::vector<std::string> warnings;
  const auto frames = load_lidar(dir / "lidar", 0.1, &warnings);
  REQUIRE(frames.size() == 2);
  CHECK(frames[0].stamp < frames[1].stamp);
  CHECK(frames[0].points[0].p.x() == 1.0);
  CHECK(warnings.size() == 1);
}

TEST_CASE("simulator frames survive a write and read") {
  const fs::path dir = scratch("lidar_round_trip");
  ScenarioOptions opt;
  opt.duration = 2.0;
  const Scenario sc = make_scenario("corridor", 4, opt);
  std::vector<LidarFrame> frames;
  for (const auto& sf : sc.lidar) frames.push_back(sf.frame);
  save_lidar(dir / "lidar", frames);
  const auto back = load_lidar(dir / "lidar", 1.0 / sc.rig.lidar_rate);
  REQUIRE(back.size() == frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    CHECK(std::abs(back[f].stamp - frames[f].stamp) < 1e-9);
    REQUIRE(back[f].points.size() == frames[f].points.size());
    double worst = 0.0;
    for (std::size_t k = 0; k < frames[f].points.size(); ++k) {
      worst = std::max(worst, std::abs(back[f].points[k].t_offset - frames[f].points[k].t_offset));
      worst = std::max(worst, (back[f].points[k].p - frames[f].points[k].p).norm());
    }
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("trajectory round trip keeps unit quaternions") {
  const fs::path dir = scratch("trajectory");
  const auto traj = line_trajectory(20);
  save_trajectory(dir / "t.txt", traj);
  const auto back = load_trajectory(dir / "t.txt");
  REQUIRE(back.size() == traj.size());
  for (std::size_t k = 0; k < traj.size(); ++k) {
    CHECK((back[k].pose.p - traj[k].pose.p).norm() < 1e-12);
    CHECK(std::abs(back[k].pose.q.angularDistance(traj[k].pose.q)) < 1e-12);
  }
}

TEST_CASE("config parsing") {
  const fs::path dir = scratch("config");
  write_text(dir / "run.cfg",
             "# dataset\nimu = imu.txt\nlidar = /data/lidar\noutput = out\n"
             "keyframe_rotation_deg = 12\ncalibrate = false\next_yaw_deg = 2\ntd = 0.005\nseed = 9\n");
  const RunConfig c = load_config(dir / "run.cfg");
  CHECK(c.imu == dir / "imu.txt");
  CHECK(c.lidar == fs::path("/data/lidar"));
  CHECK(c.truth.empty());
  CHECK(c.estimator.keyframe.rotation == doctest::Approx(12.0 * kDegToRad));
  CHECK_FALSE(c.estimator.calibration.enabled);
  CHECK(rotation_to_euler(c.estimator.initial_extrinsics.q.toRotationMatrix()).z() ==
        doctest::Approx(2.0 * kDegToRad));
  CHECK(c.estimator.initial_time_delay == 0.005);
  CHECK(c.estimator.outlier_seed == 9u);

  write_text(dir / "bad.cfg", "imu = a\nlidar = b\noutput = c\nkeyframe_speed = 3\n");
  CHECK_THROWS_AS(load_config(dir / "bad.cfg"), Error);
  write_text(dir / "nan.cfg", "imu = a\nlidar = b\noutput = c\ntd = soon\n");
  CHECK_THROWS_AS(load_config(dir / "nan.cfg"), Error);

  save_config(dir / "again.cfg", c);
  const RunConfig d = load_config(dir / "again.cfg");
  CHECK(d.imu == c.imu);
  CHECK(d.estimator.keyframe.rotation == doctest::Approx(c.estimator.keyframe.rotation));
  CHECK(d.estimator.initial_time_delay == c.estimator.initial_time_delay);
}

TEST_CASE("evaluate on identical trajectories is zero") {
  const auto traj = line_trajectory(30);
  const auto m = evaluate(traj, traj);
  CHECK(m.ate < 1e-12);
  CHECK(m.are < 1e-9);
  CHECK(m.end_to_end < 1e-12);
  CHECK(m.matched == 30u);
}

TEST_CASE("evaluate absorbs a constant offset and heading") {
  const auto truth = line_trajectory(30);
  auto est = truth;
  const Quat yaw(Eigen::AngleAxisd(0.7, Vec3::UnitZ()));
  for (auto& r : est) r.pose = Pose{yaw * r.pose.p + Vec3(1.0, 0.0, 0.0), yaw * r.pose.q};
  const auto m = evaluate(est, truth);
  CHECK(m.ate < 1e-12);
  CHECK(m.end_to_end < 1e-12);
  CHECK(m.are < 1e-9);
}

TEST_CASE("evaluate three-pose hand case") {
  auto truth = line_trajectory(3);
  auto est = truth;
  est[1].pose.p += Vec3(0.0, 0.1, 0.0);
  const auto m = evaluate(est, truth);
  CHECK(std::abs(m.ate - 0.1 / std::sqrt(3.0)) < 1e-9);
  CHECK(m.end_to_end < 1e-12);
}

TEST_CASE("evaluate ignores a common time shift and needs overlap") {
  const auto truth = line_trajectory(40);
  auto est = truth;
  for (std::size_t k = 0; k < est.size(); ++k) est[k].pose.p.z() += 0.01 * static_cast<double>(k % 3);
  auto truth_s = truth, est_s = est;
  for (auto& r : truth_s) r.t += 123.0;
  for (auto& r : est_s) r.t += 123.0;
  const auto a = evaluate(est, truth), b = evaluate(est_s, truth_s);
  CHECK(std::abs(a.ate - b.ate) < 1e-12);
  CHECK(std::abs(a.are - b.are) < 1e-9);

  std::vector<TrajectoryRecord> one{truth.front()};
  CHECK_THROWS_AS(evaluate(one, truth), Error);
}

TEST_CASE("missing IMU file fails without writing outputs") {
  const fs::path dir = scratch("missing_imu");
  fs::create_directories(dir / "lidar");
  write_text(dir / "lidar" / "100000000.txt", "0.0 1 2 3\n");
  RunConfig c;
  c.imu = dir / "imu.txt";
  c.lidar = dir / "lidar";
  c.output = dir / "out";
  std::ostringstream log;
  CHECK(run_pipeline(c, log) != 0);
  CHECK_FALSE(fs::exists(dir / "out"));
}

TEST_CASE("pipeline writes outputs and holds calibration when disabled") {
  const fs::path dir = scratch("pipeline");
  ScenarioOptions opt;
  opt.duration = 6.0;
  const Scenario sc = make_scenario("room-orbit", 2, opt);
  EstimatorOptions eo;
  eo.calibration.enabled = false;
  eo.initial_time_delay = 0.002;
  export_scenario(sc, dir, eo);
  const RunConfig c = load_config(dir / "config.txt");
  std::ostringstream log;
  REQUIRE(run_pipeline(c, log) == 0);
  for (const char* f : {"trajectory.txt", "attitude_std.txt", "calibration.txt", "metrics.txt"})
    CHECK(fs::exists(c.output / f));

  std::ifstream in(c.output / "calibration.txt");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double t, ex, ey, ez, px, py, pz, td_ms;
    ss >> t >> ex >> ey >> ez >> px >> py >> pz >> td_ms;
    CHECK(ex == 0.0);
    CHECK(ey == 0.0);
    CHECK(ez == 0.0);
    CHECK(px == 0.0);
    CHECK(py == 0.0);
    CHECK(pz == 0.0);
    CHECK(td_ms == doctest::Approx(2.0));
    ++rows;
  }
  CHECK(rows > 5);

  // Identical reruns produce identical files.
  std::ifstream first(c.output / "trajectory.txt");
  const std::string a((std::istreambuf_iterator<char>(first)), std::istreambuf_iterator<char>());
  REQUIRE(run_pipeline(c, log) == 0);
  std::ifstream second(c.output / "trajectory.txt");
  const std::string b((std::istreambuf_iterator<char>(second)), std::istreambuf_iterator<char>());
  CHECK(a == b);
}
