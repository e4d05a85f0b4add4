#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "gmflow/errors.hpp"
#include "gmflow/experiments.hpp"

namespace gmflow {

enum class ExperimentKind { figure1, overlaps_sweep, mse_sweep, gap_scaling, uturn, reduced_ode, theory_only };

std::string to_string(ExperimentKind kind);

/// Every schema violation found in one pass; field() joins the names with ", ".
class ConfigError : public ValidationError {
 public:
  explicit ConfigError(std::vector<std::pair<std::string, std::string>> issues);
  const std::vector<std::pair<std::string, std::string>>& issues() const { return issues_; }

 private:
  std::vector<std::pair<std::string, std::string>> issues_;
};

struct RunConfig {
  ExperimentKind experiment = ExperimentKind::theory_only;

  struct {
    int d = 1000;
    double p = 0.8;
    double sigma = 1.0;
    std::string mu = "all_ones";
    std::uint64_t mu_seed = 0;
  } mixture;

  struct {
    std::string kind = "two_mode_dilated";
    double kappa = 4.0;
    int grid_points = 100;
    std::vector<double> norms;
  } schedule;

  struct {
    int n = 128;
    LabelSampling labels = LabelSampling::iid;
    TrainConfig config;
  } train;

  struct {
    int K = 500;
    std::uint64_t seed = 0;
  } montecarlo;

  struct {
    double n = 128.0;  // +inf allowed
    double lambda = 0.05;
    double ell = 0.05;
    SecondPhaseForm form = SecondPhaseForm::stationary;
    NoisePairing pairing = NoisePairing::fresh;
    bool empirical_fraction = false;
    int quad_order = 64;
  } theory;

  struct {
    std::vector<double> times;
    int seeds = 10;
    int second_phase_epochs = 0;
    std::vector<int> n_list{4, 8, 16, 32, 64};
    int repeats = 2;
    int test_draws = 1000;
    std::vector<double> t0_list;
    std::vector<double> weights;
    std::vector<double> locations;
    double spread = 1.0;
    int steps = 200;
  } sweep;

  double budget = 1e12;
  std::string output_dir = "runs";

  /// Fully resolved config, defaults filled in, output_dir left out. Hashing
  /// and the config echo use this, so a run started from the echo reproduces
  /// the report.
  nlohmann::json resolved;
};

/// Parses and validates; throws ConfigError listing every offending field.
RunConfig parse_run_config(const nlohmann::json& j);

MixtureParams mixture_of(const RunConfig& cfg);
TimeSchedule schedule_of(const RunConfig& cfg);

/// Runs the configured experiment in memory.
ExperimentReport run_experiment(const RunConfig& cfg);

/// report.json, config.json and one CSV per curve, each written atomically.
void write_run_directory(const ExperimentReport& report, const nlohmann::json& echo, const std::string& dir);

/// Hex form of the config hash; names the run directory.
std::string hash_hex(std::uint64_t hash);

struct RunOverrides {
  std::optional<std::string> output_dir;
  std::optional<int> threads;
  std::optional<std::uint64_t> seed;
};

struct RunOutcome {
  int exit_code = 0;  // 0 ok, 1 validation, 2 numerical
  std::string run_dir;
  std::string message;
};

/// Reads the config file, applies overrides, runs, writes artifacts.
RunOutcome run(const std::string& config_path, const RunOverrides& overrides = {});

}  // namespace gmflow
