#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "gmflow/csv.hpp"
#include "gmflow/dae.hpp"
#include "gmflow/exact_flow.hpp"
#include "gmflow/theory.hpp"

namespace gmflow {

struct ExperimentReport {
  std::string name;
  nlohmann::json config;
  std::uint64_t config_hash = 0;
  nlohmann::json metrics = nlohmann::json::object();
  nlohmann::json seeds = nlohmann::json::object();
  std::vector<std::pair<std::string, Series>> curves;  // file stem, table
  double wall_seconds = 0.0;

  nlohmann::json to_json(bool include_wall_time = true) const;
};

/// FNV-1a over the canonical (sorted-key, compact) JSON dump.
std::uint64_t config_hash(const nlohmann::json& config);

/// Fraction of terminal states with mu . X >= 0.
double estimate_p(const TrajectoryEnsemble& ensemble, const MixtureParams& params);
double estimate_p(const StateMatrix& states, const MixtureParams& params);
/// Square root of the pooled orthogonal-coordinate variance at the terminal time.
double estimate_sigma(const TrajectoryEnsemble& ensemble, const MixtureParams& params);
double estimate_sigma(const StateMatrix& states, const MixtureParams& params);

/// Fraction of M > 0 (ties counted as +) at every grid time; needs projections.
std::vector<double> positive_fraction_curve(const TrajectoryEnsemble& ensemble);

struct GapTable {
  // |w . (X - X_hat)| / sqrt(d) averaged over trajectories, unit w.
  double mu = 0.0;
  double eta = 0.0;         // along the dataset's sigma sum z
  double eta_signed = 0.0;  // along sigma sum s z, the direction u actually learns
  double xi = 0.0;          // along sum s x0
  std::vector<double> complement;  // random unit directions orthogonal to all of the above
  double complement_mean = 0.0;
  // Same projections with the scaling of the trajectory argument:
  // eta . D / (sigma^2 n d) and xi . D / (n d).
  double zeta_eta = 0.0;
  double zeta_eta_signed = 0.0;
  double zeta_xi = 0.0;
  /// mu + zeta_eta_signed + zeta_xi.
  double span() const { return mu + zeta_eta_signed + zeta_xi; }
};

/// continuous: the exact velocity evaluated at every RK4 stage.
/// matched_slices: exact-denoiser slices on the learned grid, held piecewise
/// constant like the learned ones, so time discretization cancels.
enum class ExactReference { continuous, matched_slices };

/// Integrates the exact and learned flows from shared N(0, I) starts over the
/// learned schedule's grid and compares the terminal states.
GapTable exact_vs_learned_gap(const MixtureParams& params, const Dataset& data, const TimeSchedule& schedule,
                              const DenoiserSchedule& learned, int K, std::uint64_t seed,
                              ExactReference reference = ExactReference::matched_slices);

/// Exact-denoiser slices at every grid time.
DenoiserSchedule exact_slices(const MixtureParams& params, const TimeSchedule& schedule, const std::vector<double>& grid);

/// Slices built from the predicted overlaps instead of training: first phase
/// c = 0, u = m mu + q_eta sum s z, w = omega mu, predicted b; second phase
/// u = m mu + q_eta sum s z + q_xi sum s x0, predicted c and the exact-denoiser
/// w and b. Only defined for the two-mode dilated schedule.
struct TheorySliceOptions {
  double lambda = 0.05;
  double ell = 0.05;
  SecondPhaseForm form = SecondPhaseForm::stationary;
  NoisePairing pairing = NoisePairing::paired;
  SaddleConfig saddle;
};
DenoiserSchedule theory_slices(const MixtureParams& params, const Dataset& data, const TimeSchedule& schedule,
                               const std::vector<double>& grid, const TheorySliceOptions& options = {});

/// Predicted overlaps for one time of the two-mode dilated schedule. First
/// phase uses kt = kappa t; second phase uses tau = beta(t).
OverlapSet predict_overlaps(const TimeSchedule& schedule, double t, double n, double p, double sigma, double lambda,
                            double ell, SecondPhaseForm form, NoisePairing pairing, const SaddleConfig& saddle = {});

struct MseCurve {
  std::vector<double> t;
  std::vector<double> train;
  std::vector<double> test;
};

/// (1/d) mean |f(x_t) - x_1|^2 per slice on the training pairs and on
/// `test_draws` fresh pairs.
MseCurve mse_empirical(const DenoiserSchedule& learned, const Dataset& data, const MixtureParams& params,
                       const TimeSchedule& schedule, int test_draws, std::uint64_t seed);

/// Theory table over a grid of the two-mode schedule: t, phase, m, omega, c,
/// b, q, mse_train, mse_test.
Series theory_curve(const TimeSchedule& schedule, const std::vector<double>& grid, double n, double p, double sigma,
                    double lambda, double ell, SecondPhaseForm form, NoisePairing pairing,
                    const SaddleConfig& saddle = {});

struct FigureOneConfig {
  int d = 1000;
  int n = 128;
  double p = 0.8;
  double sigma = 1.0;
  double kappa = 4.0;
  int grid_points = 100;
  int K = 500;
  LabelSampling labels = LabelSampling::iid;
  TrainConfig train;
  std::uint64_t seed = 0;
  /// Upper bound on d * n * grid_points * epochs.
  double budget = 1e12;
};

struct FigureOneResult {
  DenoiserSchedule identity_schedule;
  DenoiserSchedule dilated_schedule;
  TrajectoryEnsemble identity_ensemble;
  TrajectoryEnsemble dilated_ensemble;
  MixtureParams params;
  Dataset data;
  ExperimentReport report;
};

FigureOneResult figure1_run(const FigureOneConfig& config);

struct UTurnCurve {
  std::vector<double> t0;
  std::vector<double> pooled;
  std::vector<double> plus;   // trials that started in the +mu mode
  std::vector<double> minus;  // trials that started in the -mu mode
  double p_hat = 0.0;         // generation fraction of the same field from N(0, I)
  int plus_trials = 0;
  int minus_trials = 0;
};

/// U-Turn, ODE analog: a data draw x_1 is noised to t0 with the interpolant
/// kernel alpha x_0' + beta x_1 (fresh x_0'), the field is integrated forward
/// to the end of the grid, and the terminal mode (sign of M) is compared with
/// the starting one. The same (x_1, x_0') pair is reused across t0.
UTurnCurve uturn_curve(const DenoiserSchedule& learned, const MixtureParams& params, const TimeSchedule& schedule,
                       const std::vector<double>& t0_list, int trials, std::uint64_t seed);

/// Trains slices at `times` for several datasets and compares seed-averaged
/// measured overlaps with the predictions.
struct OverlapSweepConfig {
  int d = 2000;
  int n = 8;
  double p = 0.8;
  double sigma = 1.0;
  double kappa = 2.0;
  std::vector<double> times;
  int seeds = 10;
  LabelSampling labels = LabelSampling::stratified;
  TrainConfig train;
  int second_phase_epochs = 0;  // 0: same as train.epochs
  /// Theory regularization; NaN maps the training values (halved).
  double lambda = OverlapSet::nan;
  double ell = OverlapSet::nan;
  SecondPhaseForm form = SecondPhaseForm::stationary;
  NoisePairing pairing = NoisePairing::fresh;
  /// Predict at each dataset's positive fraction instead of the true p.
  bool empirical_fraction = false;
  SaddleConfig saddle;
  std::uint64_t seed = 0;
};

struct OverlapSweepResult {
  std::vector<OverlapSet> measured;   // seed means
  std::vector<OverlapSet> predicted;  // seed means
  /// Largest |measured - predicted| over the times where both exist.
  double max_abs_m = 0.0, max_abs_omega = 0.0, max_abs_c = 0.0, max_abs_b = 0.0, max_abs_q = 0.0;
  double max_abs() const;
  Series table() const;
};

OverlapSweepResult overlap_sweep(const OverlapSweepConfig& config);

/// Gap between the exact flow and the flow of theory-built slices over a list
/// of sample sizes, averaged over `repeats` datasets.
struct GapScalingConfig {
  int d = 2000;
  double p = 0.8;
  double sigma = 1.0;
  double kappa = 4.0;
  int grid_points = 100;
  std::vector<int> n_list{4, 8, 16, 32, 64};
  int repeats = 2;
  int K = 100;
  TheorySliceOptions theory;
  ExactReference reference = ExactReference::matched_slices;
  std::uint64_t seed = 0;
};

struct GapScalingResult {
  std::vector<int> n;
  std::vector<GapTable> gaps;  // repeat means
  /// Least-squares slope of log span() against log n.
  double span_slope = 0.0;
  Series table() const;
};

GapScalingResult gap_scaling(const GapScalingConfig& config);

/// Least-squares slope of log y against log x.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace gmflow
