// Command-line experiment runner: config-driven evaluation/control/
// verification grids plus the score-distribution tool.
//
// Exit codes: 0 success, 1 any grid cell failed, 2 config or input error.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "retrace/config.hpp"
#include "retrace/experiment.hpp"
#include "retrace/version.hpp"

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw retrace::ParseError("cannot open config file '" + path + "'", 0);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

int run_config(const std::string& config_path, const std::string& out_dir,
               std::uint64_t seed_offset, int jobs, bool force_verify) {
  retrace::ExperimentConfig config;
  try {
    config = retrace::parse_experiment_config(read_file(config_path));
    if (force_verify) config.mode = retrace::ExperimentMode::Verify;
  } catch (const retrace::ParseError& e) {
    std::cerr << "config error: " << config_path << ": " << e.what() << "\n";
    return 2;
  }
  try {
    retrace::ExperimentOutcome outcome =
        retrace::run_experiment(config, out_dir, seed_offset, jobs);
    std::cout << "wrote " << outcome.curves_path << " (" << outcome.n_cells
              << " cells";
    if (outcome.n_failed > 0) std::cout << ", " << outcome.n_failed << " failed";
    std::cout << ")\n";
    for (const std::string& err : outcome.cell_errors)
      std::cerr << "cell failed: " << err << "\n";
    return outcome.n_failed > 0 ? 1 : 0;
  } catch (const retrace::ParseError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tabular off-policy return-based RL experiments"};
  app.set_version_flag("--version", retrace::kVersion);
  app.require_subcommand(1);

  std::string out_dir = ".";
  std::uint64_t seed_offset = 0;
  int jobs = 0;
  app.add_option("--out", out_dir, "Output directory")->capture_default_str();
  app.add_option("--seed-offset", seed_offset,
                 "Value added to every seed in the config");
  app.add_option("--jobs", jobs, "Worker pool size (0 = hardware parallelism)");

  std::string run_config_path;
  CLI::App* run_cmd = app.add_subcommand("run", "Run the experiment grid from a config");
  run_cmd->add_option("config", run_config_path, "Config file path")->required();
  run_cmd->fallthrough();

  std::string verify_config_path;
  CLI::App* verify_cmd =
      app.add_subcommand("verify", "Run the verification battery from a config");
  verify_cmd->add_option("config", verify_config_path, "Config file path")->required();
  verify_cmd->fallthrough();

  std::string scores_in, scores_out;
  CLI::App* scores_cmd = app.add_subcommand(
      "scores", "Normalize a game,algorithm,score CSV into score distributions");
  scores_cmd->add_option("input", scores_in, "Input CSV")->required();
  scores_cmd->add_option("output", scores_out, "Output CSV")->required();
  scores_cmd->fallthrough();

  CLI11_PARSE(app, argc, argv);

  if (app.got_subcommand(run_cmd))
    return run_config(run_config_path, out_dir, seed_offset, jobs, false);
  if (app.got_subcommand(verify_cmd))
    return run_config(verify_config_path, out_dir, seed_offset, jobs, true);
  if (app.got_subcommand(scores_cmd)) {
    try {
      retrace::ScoreTable table = retrace::load_score_csv(scores_in);
      retrace::write_score_distribution_csv(retrace::inter_algorithm_scores(table),
                                            scores_out);
      std::cout << "wrote " << scores_out << "\n";
      return 0;
    } catch (const retrace::ParseError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  }
  return 2;
}
