// vislam: simulate | run | eval | compare
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vislam/config.hpp"
#include "vislam/dataset.hpp"
#include "vislam/eval.hpp"
#include "vislam/pipeline.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kDegraded = 2;
constexpr int kEvalFailure = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::string out;
  bool single_thread = false;
};

vislam::RunConfig resolve(const Common& c) {
  vislam::RunConfig cfg =
      c.config.empty() ? vislam::default_run_config() : vislam::load_run_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.mode.empty()) cfg.mode = vislam::parse_mode(c.mode);
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (c.single_thread) cfg.single_thread = true;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* app, Common& c, bool with_mode) {
  app->add_option("--config", c.config, "run configuration (YAML)");
  app->add_option("--seed", c.seed, "override the configured seed");
  app->add_option("--out", c.out, "output directory");
  if (with_mode) {
    app->add_option("--mode", c.mode, "ekf-only | full")->check(CLI::IsMember({"ekf-only", "full"}));
    app->add_flag("--single-thread", c.single_thread, "deterministic serialized back-end");
  }
}

int cmd_simulate(const Common& c) {
  const vislam::RunConfig cfg = resolve(c);
  vislam::SimSpec spec = cfg.sim;
  spec.trajectory.seed = cfg.seed;
  const vislam::Dataset d = vislam::simulate(spec);
  vislam::write_dataset(d, cfg.output_dir);
  std::printf("wrote %zu imu samples, %zu frames to %s\n", d.imu.size(), d.frames.size(),
              cfg.output_dir.string().c_str());
  return kOk;
}

int cmd_run(const Common& c, const std::string& dataset) {
  vislam::RunConfig cfg = resolve(c);
  if (!dataset.empty()) cfg.dataset = dataset;
  const vislam::RunResult r = vislam::run_pipeline(cfg);
  for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  if (r.ate_rmse()) {
    std::printf("%s ate_rmse=%.6f m mean_nees=%.3f inlier_rate=%.3f keyframes=%d wall=%.2fs\n",
                r.run.c_str(), *r.ate_rmse(), r.mean_nees, r.inlier_rate, r.keyframe_count,
                r.timing.total);
  } else {
    std::printf("%s (no ground truth) wall=%.2fs\n", r.run.c_str(), r.timing.total);
  }
  return r.degraded ? kDegraded : kOk;
}

int cmd_eval(const std::string& est_path, const std::string& gt_path, double tolerance,
             const std::string& out) {
  const vislam::Trajectory est = vislam::read_trajectory_csv(est_path);
  const vislam::Trajectory gt = vislam::read_groundtruth_trajectory(gt_path);
  const vislam::AlignmentResult a = vislam::align_trajectories(est, gt, tolerance);
  nlohmann::json j;
  j["ate_rmse"] = a.ate_rmse;
  j["pairs"] = a.pairs.size();
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::ofstream(out) << j.dump(2) << "\n";
  }
  return kOk;
}

int cmd_compare(const std::vector<std::string>& files, const std::string& out) {
  std::vector<vislam::RunMetrics> runs;
  for (const auto& f : files) {
    std::ifstream is(f);
    if (!is) throw std::runtime_error("cannot open " + f);
    const nlohmann::json j = nlohmann::json::parse(is);
    vislam::RunMetrics m;
    m.run = j.value("run", f);
    m.sequence = j.value("sequence", std::string("NA"));
    m.mode = j.value("mode", std::string("NA"));
    if (j.contains("ate_rmse") && j["ate_rmse"].is_number()) m.ate_rmse = j["ate_rmse"].get<double>();
    runs.push_back(m);
  }
  bool missing = false;
  const std::string csv = vislam::format_compare_csv(vislam::compare_runs(runs, &missing));
  if (out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream(out) << csv;
  }
  return missing ? kEvalFailure : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monocular visual-inertial SLAM on synthetic data"};
  app.require_subcommand(1);

  Common sim_opts, run_opts;
  auto* sim = app.add_subcommand("simulate", "write a synthetic dataset");
  add_common(sim, sim_opts, false);

  auto* run = app.add_subcommand("run", "run the estimator and write artifacts");
  add_common(run, run_opts, true);
  std::string dataset;
  run->add_option("--dataset", dataset, "dataset directory instead of simulation");

  auto* eval = app.add_subcommand("eval", "align an estimate to ground truth");
  std::string est, gt, eval_out;
  double tolerance = 0.025;
  eval->add_option("--est", est, "trajectory.csv")->required();
  eval->add_option("--gt", gt, "groundtruth.csv")->required();
  eval->add_option("--tolerance", tolerance, "association tolerance [s]");
  eval->add_option("--out", eval_out, "metrics JSON path");

  auto* compare = app.add_subcommand("compare", "tabulate metrics.json files");
  std::vector<std::string> files;
  std::string compare_out;
  compare->add_option("metrics", files, "metrics.json files")->required();
  compare->add_option("--out", compare_out, "CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }

  try {
    if (*sim) return cmd_simulate(sim_opts);
    if (*run) return cmd_run(run_opts, dataset);
    if (*eval) return cmd_eval(est, gt, tolerance, eval_out);
    if (*compare) return cmd_compare(files, compare_out);
  } catch (const vislam::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const vislam::DatasetError& e) {
    std::fprintf(stderr, "dataset error: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kEvalFailure;
  }
  return kOk;
}
