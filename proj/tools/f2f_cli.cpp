// Command-line driver: run a dataset, export a simulator scenario, or score
// a trajectory against ground truth.

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "f2f/error.hpp"
#include "f2f/evaluate.hpp"
#include "f2f/io.hpp"
#include "f2f/pipeline.hpp"
#include "f2f/simulator.hpp"

using namespace f2f;

int main(int argc, char** argv) {
  CLI::App app{"Frame-to-frame LiDAR-inertial odometry"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run the estimator on a dataset described by a config file");
  std::string config_path;
  run->add_option("config", config_path, "Flat key = value config file")->required()->check(CLI::ExistingFile);

  auto* sim = app.add_subcommand("sim", "Export a simulator scenario as a dataset with a ready config");
  std::string scenario;
  std::uint64_t seed = 1;
  std::string out_dir;
  bool noiseless = false;
  double duration = 0.0;
  std::vector<double> ext_rot_deg{0.0, 0.0, 0.0}, lever{0.0, 0.0, 0.0};
  double td_ms = 0.0;
  bool no_calibration = false;
  sim->add_option("scenario", scenario, "corridor, room-orbit or figure-eight")->required();
  sim->add_option("seed", seed, "Random seed")->required();
  sim->add_option("output", out_dir, "Dataset directory")->required();
  sim->add_flag("--noiseless", noiseless, "Disable IMU and range noise");
  sim->add_option("--duration", duration, "Override the scenario length, s");
  sim->add_option("--ext-rot-deg", ext_rot_deg, "True LiDAR-IMU roll pitch yaw, deg")->expected(3);
  sim->add_option("--lever", lever, "True LiDAR-IMU lever arm, m")->expected(3);
  sim->add_option("--td-ms", td_ms, "True LiDAR time delay, ms");
  sim->add_flag("--no-calibration", no_calibration, "Write a config with online calibration off");

  auto* eval = app.add_subcommand("eval", "Score an estimated trajectory against ground truth");
  std::string estimate_path, truth_path;
  eval->add_option("estimate", estimate_path, "Estimated trajectory")->required()->check(CLI::ExistingFile);
  eval->add_option("truth", truth_path, "Ground-truth trajectory")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return run_pipeline(load_config(config_path), std::cerr);
    if (*sim) {
      ScenarioOptions so;
      so.noise = !noiseless;
      if (duration > 0.0) so.duration = duration;
      so.ext.q = Quat(euler_to_rotation(ext_rot_deg[0] * kDegToRad, ext_rot_deg[1] * kDegToRad,
                                        ext_rot_deg[2] * kDegToRad));
      so.ext.p = Vec3(lever[0], lever[1], lever[2]);
      so.td = td_ms * 1e-3;
      const Scenario sc = make_scenario(scenario, seed, so);
      EstimatorOptions eo;
      eo.calibration.enabled = !no_calibration;
      export_scenario(sc, out_dir, eo);
      std::cout << "wrote " << sc.lidar.size() << " frames, " << sc.imu.samples.size() << " IMU samples, "
                << sc.distance() << " m to " << out_dir << '\n';
      return 0;
    }
    if (*eval) {
      const TrajectoryMetrics m = evaluate(load_trajectory(estimate_path), load_trajectory(truth_path));
      std::printf("ate_m = %.6f\nare_deg = %.6f\nend_to_end_m = %.6f\nmatched = %zu\n", m.ate, m.are, m.end_to_end,
                  m.matched);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
