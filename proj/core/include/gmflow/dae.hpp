#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gmflow/exact_flow.hpp"
#include "gmflow/mixture.hpp"
#include "gmflow/schedule.hpp"

namespace gmflow {

/// f(x) = c x + u tanh(w.x / sqrt(d) + b) at slice time t.
struct SliceParams {
  double t = 0.0;
  double c = 0.0;
  double b = 0.0;
  Vector u;
  Vector w;

  int d() const { return static_cast<int>(u.size()); }
  bool finite() const;
};

struct DenoiserSchedule {
  std::vector<double> grid;
  std::vector<SliceParams> slices;
};

struct NoisePolicy {
  enum class Kind { fresh_per_epoch, fixed_k };
  Kind kind = Kind::fresh_per_epoch;
  int k = 1;  // fixed_k only

  static NoisePolicy fresh() { return {}; }
  static NoisePolicy fixed(int k) { return {Kind::fixed_k, k}; }
};

struct TrainConfig {
  int epochs = 5000;
  double step_size = 1e-2;
  /// When positive, the step decays geometrically from step_size to this
  /// value over the epochs; 0 keeps it constant.
  double final_step_size = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double lambda = 0.1;
  double ell = 0.1;
  NoisePolicy noise;
  std::uint64_t seed = 0;
};

void validate(const TrainConfig& config);

/// Pairs (x_t, x_1), one per row. The data term is scaled by `weight`.
struct Batch {
  StateMatrix xt;
  StateMatrix x1;
  double weight = 1.0;

  Eigen::Index size() const { return xt.rows(); }
};

struct SliceGradient {
  double c = 0.0;
  double b = 0.0;
  Vector u;
  Vector w;
};

Vector dae_forward(const SliceParams& theta, ConstVecRef x);

/// weight * sum |f(x_t) - x_1|^2 + (lambda/2)|u|^2 + (ell/2)|w|^2
double empirical_loss(const SliceParams& theta, const Batch& batch, double lambda, double ell);
SliceGradient loss_gradient(const SliceParams& theta, const Batch& batch, double lambda, double ell);
/// Loss, and the gradient into *grad when grad is non-null, from one forward pass.
double loss_and_gradient(const SliceParams& theta, const Batch& batch, double lambda, double ell, SliceGradient* grad);

/// Parameters reproducing the exact denoiser at the given coefficients.
SliceParams exact_match_slice(const MixtureParams& params, const InterpolantCoeffs& coeffs, double t = 0.0);

/// c = b = 0, u and w with i.i.d. N(0, 1/d) entries.
SliceParams initial_slice(int d, std::uint64_t seed, double t);

/// Training batch at time t for one epoch. Fresh noise depends on (seed,
/// epoch, sample id); fixed_k noise on (seed, draw, sample id) only, with draw
/// 0 taken from the dataset's paired x_0 when present. Rows are ordered by
/// sample id.
Batch make_batch(const Dataset& data, const InterpolantCoeffs& coeffs, const TrainConfig& config, int epoch);

struct SliceTrace {
  SliceParams theta;
  std::vector<double> loss;  // loss before each epoch's update, plus the final loss
};

SliceParams train_slice(const Dataset& data, const TimeSchedule& schedule, double t, const TrainConfig& config);
SliceTrace train_slice_traced(const Dataset& data, const TimeSchedule& schedule, double t, const TrainConfig& config);

std::uint64_t slice_seed(std::uint64_t seed, std::size_t slice_index);

/// Independent slices; slice i is trained with seed slice_seed(config.seed, i).
DenoiserSchedule train_all(const Dataset& data, const TimeSchedule& schedule, const std::vector<double>& grid,
                           const TrainConfig& config);

/// Piecewise-constant lookup: the slice at the last grid time <= t.
const SliceParams& slice_at(const DenoiserSchedule& sched, double t);

/// tau'(f(x) - x)/alpha, switching to beta' f(x) where alpha vanishes.
void learned_velocity(const DenoiserSchedule& sched, const TimeSchedule& schedule, double t, ConstVecRef x,
                      VecRef out);
Vector learned_velocity(const DenoiserSchedule& sched, const TimeSchedule& schedule, double t, ConstVecRef x);
VelocityField learned_field(const DenoiserSchedule& sched, const TimeSchedule& schedule);

nlohmann::json to_json(const DenoiserSchedule& sched, std::uint64_t config_hash);
DenoiserSchedule denoiser_schedule_from_json(const nlohmann::json& j);

}  // namespace gmflow
