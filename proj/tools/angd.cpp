// Command-line driver: run / grid / compare / flow jobs from JSON configs.

#include <CLI11.hpp>
#include <iostream>

#include "angd/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"accelerated natural-gradient experiment driver"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  int seed_override = -1;
  int jobs = 1;
  std::vector<std::string> compare_dirs;
  std::string compare_out = "compare.csv";

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    if (needs_config)
      sub->add_option("--config", config_path, "experiment config (JSON)")
          ->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--jobs", jobs, "parallel workers");
  };

  CLI::App* run_cmd = app.add_subcommand("run", "run one experiment config");
  add_common(run_cmd, true);
  run_cmd->add_option("--seed", seed_override, "replace the config's seed list");

  CLI::App* grid_cmd = app.add_subcommand("grid", "run a hyperparameter grid");
  add_common(grid_cmd, true);

  CLI::App* flow_cmd = app.add_subcommand("flow", "integrate a continuous flow");
  add_common(flow_cmd, true);

  CLI::App* compare_cmd =
      app.add_subcommand("compare", "align runs into a plot-ready CSV");
  compare_cmd->add_option("runs", compare_dirs, "run output directories")
      ->expected(-2);
  compare_cmd->add_option("--out", compare_out, "output CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    using angd::harness::Json;
    if (run_cmd->parsed()) {
      Json cfg = angd::harness::load_config(config_path);
      if (seed_override >= 0) cfg["seeds"] = Json::array({seed_override});
      const Json summary = angd::harness::run_experiment(cfg, out_dir, jobs);
      std::cout << summary.dump(2) << std::endl;
      return summary.at("any_failed").get<bool>() ? 2 : 0;
    }
    if (grid_cmd->parsed()) {
      const Json summary = angd::harness::grid_search(
          angd::harness::load_config(config_path), out_dir, jobs);
      std::cout << summary.dump(2) << std::endl;
      return 0;
    }
    if (flow_cmd->parsed()) {
      const Json summary = angd::harness::run_flow_job(
          angd::harness::load_config(config_path), out_dir);
      std::cout << summary.dump(2) << std::endl;
      return 0;
    }
    if (compare_cmd->parsed()) {
      std::vector<std::filesystem::path> dirs(compare_dirs.begin(),
                                              compare_dirs.end());
      angd::harness::compare_runs(dirs, compare_out);
      std::cout << "wrote " << compare_out << std::endl;
      return 0;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 3;
  }
  return 0;
}
