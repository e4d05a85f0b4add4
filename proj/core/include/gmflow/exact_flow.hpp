#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "gmflow/csv.hpp"
#include "gmflow/mixture.hpp"
#include "gmflow/schedule.hpp"

namespace gmflow {

using ConstVecRef = Eigen::Ref<const Vector>;
using VecRef = Eigen::Ref<Vector>;

/// b_t(x): writes the drift at time t into `out`.
using VelocityField = std::function<void(double t, ConstVecRef x, VecRef out)>;

/// Posterior mean E[x1 | x_t = x] for the two-mode mixture.
Vector exact_denoiser(const MixtureParams& params, const InterpolantCoeffs& coeffs, ConstVecRef x);

/// Exact drift in the combined form
///   ((a a' + s^2 b b') x + a (a b' - a' b) mu tanh(h + b mu.x / D)) / D,  D = a^2 + s^2 b^2,
/// which stays finite at alpha = 0.
void exact_velocity(const MixtureParams& params, const TimeSchedule& schedule, double t, ConstVecRef x, VecRef out);
Vector exact_velocity(const MixtureParams& params, const TimeSchedule& schedule, double t, ConstVecRef x);

/// Same drift assembled from the denoiser, (b' - a' b / a) f(x) + (a'/a) x. Needs alpha > 0.
Vector velocity_from_denoiser(const InterpolantCoeffs& coeffs, ConstVecRef denoised, ConstVecRef x);

VelocityField exact_field(const MixtureParams& params, const TimeSchedule& schedule);

struct EnsembleOptions {
  /// Grid times whose full K x d states are kept. The first and last grid
  /// points are always kept.
  std::vector<double> checkpoints;
  /// When set, mu . X / d is recorded for every trajectory at every grid time.
  std::optional<Vector> mu;
};

struct TrajectoryEnsemble {
  std::vector<double> grid;
  std::uint64_t seed = 0;
  std::vector<std::size_t> checkpoint_index;  // into grid
  std::vector<StateMatrix> checkpoint_states;
  Eigen::MatrixXd projections;  // K x grid.size(); empty unless EnsembleOptions::mu was set

  int trajectories() const;
  /// States at grid time t; throws ValidationError when t is not a stored checkpoint.
  const StateMatrix& states_at(double t) const;
  const StateMatrix& terminal() const { return checkpoint_states.back(); }
};

/// Fixed-step classical RK4 along `grid` from the given initial states.
TrajectoryEnsemble integrate_states(const VelocityField& field, StateMatrix initial, const std::vector<double>& grid,
                                    const EnsembleOptions& options = {});

/// Same, starting from K i.i.d. N(0, I_d) draws keyed by `seed`.
TrajectoryEnsemble integrate_ensemble(const VelocityField& field, int d, int K, const std::vector<double>& grid,
                                      std::uint64_t seed, const EnsembleOptions& options = {});

ProjectionStats projection_stats(const MixtureParams& params, const TrajectoryEnsemble& ensemble, double t);

/// Long-format table of every stored checkpoint: traj_id, t, M, nu.
Series ensemble_csv(const MixtureParams& params, const TrajectoryEnsemble& ensemble);

/// One-dimensional mixture sum_i p_i N(r_i, spread^2).
struct Mixture1D {
  std::vector<double> weights;
  std::vector<double> locations;
  double spread = 1.0;

  /// Scales every mode (location and spread) by `factor`.
  Mixture1D scaled(double factor) const;
  std::size_t nearest_mode(double x) const;
};

Mixture1D make_mixture_1d(std::vector<double> weights, std::vector<double> locations, double spread = 1.0);

/// E[Z | (1-t) Z + t M = nu] for Z ~ N(0,1), M ~ mix. Returns nu at t = 0.
double reduced_denoiser_1d(const Mixture1D& mix, double t, double nu);

/// E[M - Z | (1-t) Z + t M = y], equal to (y - eta_t(y)) / t for t > 0 and
/// finite at t = 0.
double reduced_velocity_1d(const Mixture1D& mix, double t, double y);

struct ReducedEnsemble {
  std::vector<double> terminal;
  std::vector<double> mode_fractions;  // nearest-location classification at the end time
};

/// K scalar flows of the projected ODE under `schedule`, `steps` RK4 steps
/// over the schedule domain, starting from N(0,1) at tau = 0.
ReducedEnsemble integrate_reduced(const Mixture1D& mix, const TimeSchedule& schedule, int K, int steps,
                                  std::uint64_t seed);

}  // namespace gmflow
