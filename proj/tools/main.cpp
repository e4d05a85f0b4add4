#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "gmflow/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Gaussian-mixture flow experiments"};
  app.require_subcommand(1);

  auto* run_cmd = app.add_subcommand("run", "Run the experiment described by a JSON config");
  std::string config_path;
  std::optional<std::string> output_dir;
  std::optional<int> threads;
  std::optional<std::uint64_t> seed;
  run_cmd->add_option("config", config_path, "Path to the config file")->required();
  run_cmd->add_option("--output-dir", output_dir, "Parent directory for run directories");
  run_cmd->add_option("--threads", threads, "Worker threads (default: GMFLOW_THREADS or all cores)");
  run_cmd->add_option("--seed", seed, "Override montecarlo.seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  gmflow::RunOverrides overrides;
  overrides.output_dir = output_dir;
  overrides.threads = threads;
  overrides.seed = seed;
  const auto outcome = gmflow::run(config_path, overrides);
  (outcome.exit_code == 0 ? std::cout : std::cerr) << outcome.message << "\n";
  return outcome.exit_code;
}
