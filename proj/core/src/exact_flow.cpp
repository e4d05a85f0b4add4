#include "gmflow/exact_flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "gmflow/errors.hpp"
#include "gmflow/parallel.hpp"
#include "gmflow/rng.hpp"

namespace gmflow {
namespace {

constexpr double kTimeTol = 1e-12;

bool same_time(double a, double b) { return std::abs(a - b) <= kTimeTol * std::max(1.0, std::abs(a)); }

void check_grid(const std::vector<double>& grid) {
  if (grid.size() < 2) throw ValidationError("grid", "needs at least 2 points");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw ValidationError("grid", "must be strictly ascending");
}

std::string time_label(double t) {
  std::ostringstream os;
  os.precision(12);
  os << t;
  return os.str();
}

}  // namespace

Vector exact_denoiser(const MixtureParams& params, const InterpolantCoeffs& c, ConstVecRef x) {
  const double s2 = params.sigma * params.sigma;
  const double D = c.alpha * c.alpha + s2 * c.beta * c.beta;
  if (!(D > 0.0) || !std::isfinite(D)) throw NumericalError("exact_denoiser: alpha^2 + sigma^2 beta^2 must be positive");
  const double proj = params.mu.dot(x);
  const double th = std::tanh(c.beta * proj / D + params.h);
  return (c.beta * s2 / D) * x + (c.alpha * c.alpha / D * th) * params.mu;
}

void exact_velocity(const MixtureParams& params, const TimeSchedule& schedule, double t, ConstVecRef x, VecRef out) {
  if (!schedule.contains(t)) throw ValidationError("t", "outside the schedule domain: " + time_label(t));
  const auto c = coeffs_at(schedule, t);
  const double s2 = params.sigma * params.sigma;
  const double D = c.alpha * c.alpha + s2 * c.beta * c.beta;
  const double lin = (c.alpha * c.alpha_dot + s2 * c.beta * c.beta_dot) / D;
  const double amp = c.alpha * (c.alpha * c.beta_dot - c.alpha_dot * c.beta) / D;
  const double th = std::tanh(params.h + c.beta * params.mu.dot(x) / D);
  out.noalias() = lin * x + (amp * th) * params.mu;
}

Vector exact_velocity(const MixtureParams& params, const TimeSchedule& schedule, double t, ConstVecRef x) {
  Vector out(x.size());
  exact_velocity(params, schedule, t, x, out);
  return out;
}

Vector velocity_from_denoiser(const InterpolantCoeffs& c, ConstVecRef denoised, ConstVecRef x) {
  if (!(c.alpha > 0.0)) throw NumericalError("velocity_from_denoiser: requires alpha > 0");
  return (c.beta_dot - c.alpha_dot * c.beta / c.alpha) * denoised + (c.alpha_dot / c.alpha) * x;
}

VelocityField exact_field(const MixtureParams& params, const TimeSchedule& schedule) {
  return [params, schedule](double t, ConstVecRef x, VecRef out) { exact_velocity(params, schedule, t, x, out); };
}

int TrajectoryEnsemble::trajectories() const {
  return checkpoint_states.empty() ? 0 : static_cast<int>(checkpoint_states.front().rows());
}

const StateMatrix& TrajectoryEnsemble::states_at(double t) const {
  for (std::size_t i = 0; i < checkpoint_index.size(); ++i)
    if (same_time(grid[checkpoint_index[i]], t)) return checkpoint_states[i];
  throw ValidationError("t", "no checkpoint stored at t = " + time_label(t));
}

TrajectoryEnsemble integrate_states(const VelocityField& field, StateMatrix initial, const std::vector<double>& grid,
                                    const EnsembleOptions& options) {
  check_grid(grid);
  const Eigen::Index K = initial.rows();
  const Eigen::Index d = initial.cols();
  if (K < 1 || d < 1) throw ValidationError("K", "need at least one trajectory of positive dimension");
  if (options.mu && options.mu->size() != d) throw ValidationError("mu", "dimension does not match the states");

  std::vector<std::size_t> keep{0, grid.size() - 1};
  for (double t : options.checkpoints) {
    auto it = std::find_if(grid.begin(), grid.end(), [&](double g) { return same_time(g, t); });
    if (it == grid.end()) throw ValidationError("checkpoints", "time " + time_label(t) + " is not on the grid");
    keep.push_back(static_cast<std::size_t>(it - grid.begin()));
  }
  std::sort(keep.begin(), keep.end());
  keep.erase(std::unique(keep.begin(), keep.end()), keep.end());

  TrajectoryEnsemble ens;
  ens.grid = grid;
  ens.checkpoint_index = keep;
  ens.checkpoint_states.assign(keep.size(), StateMatrix(K, d));
  if (options.mu) ens.projections.resize(K, static_cast<Eigen::Index>(grid.size()));

  std::vector<int> slot(grid.size(), -1);
  for (std::size_t i = 0; i < keep.size(); ++i) slot[keep[i]] = static_cast<int>(i);
  const double inv_d = 1.0 / static_cast<double>(d);

  parallel_for(static_cast<std::size_t>(K), [&](std::size_t k) {
    const auto row = static_cast<Eigen::Index>(k);
    Vector y = initial.row(row).transpose();
    Vector k1(d), k2(d), k3(d), k4(d), tmp(d);
    auto record = [&](std::size_t g) {
      if (slot[g] >= 0) ens.checkpoint_states[static_cast<std::size_t>(slot[g])].row(row) = y.transpose();
      if (options.mu) ens.projections(row, static_cast<Eigen::Index>(g)) = options.mu->dot(y) * inv_d;
    };
    record(0);
    for (std::size_t g = 0; g + 1 < grid.size(); ++g) {
      const double t = grid[g];
      const double h = grid[g + 1] - t;
      field(t, y, k1);
      tmp.noalias() = y + 0.5 * h * k1;
      field(t + 0.5 * h, tmp, k2);
      tmp.noalias() = y + 0.5 * h * k2;
      field(t + 0.5 * h, tmp, k3);
      tmp.noalias() = y + h * k3;
      field(grid[g + 1], tmp, k4);
      y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (!y.allFinite())
        throw NumericalError("non-finite state at t = " + time_label(grid[g + 1]) + " in trajectory " +
                             std::to_string(k));
      record(g + 1);
    }
  });
  return ens;
}

TrajectoryEnsemble integrate_ensemble(const VelocityField& field, int d, int K, const std::vector<double>& grid,
                                      std::uint64_t seed, const EnsembleOptions& options) {
  if (d < 1) throw ValidationError("d", "must be positive");
  if (K < 1) throw ValidationError("K", "must be positive");
  auto ens = integrate_states(field, sample_noise(d, K, seed), grid, options);
  ens.seed = seed;
  return ens;
}

ProjectionStats projection_stats(const MixtureParams& params, const TrajectoryEnsemble& ensemble, double t) {
  return projection_stats(params, ensemble.states_at(t), t);
}

Series ensemble_csv(const MixtureParams& params, const TrajectoryEnsemble& ensemble) {
  std::vector<double> id, time, M, nu;
  const double sqrt_d = std::sqrt(static_cast<double>(params.d));
  for (std::size_t c = 0; c < ensemble.checkpoint_index.size(); ++c) {
    const double t = ensemble.grid[ensemble.checkpoint_index[c]];
    const auto& X = ensemble.checkpoint_states[c];
    for (Eigen::Index k = 0; k < X.rows(); ++k) {
      const double n = params.mu.dot(X.row(k).transpose()) / sqrt_d;
      id.push_back(static_cast<double>(k));
      time.push_back(t);
      M.push_back(n / sqrt_d);
      nu.push_back(n);
    }
  }
  return {{"traj_id", id}, {"t", time}, {"M", M}, {"nu", nu}};
}

Mixture1D Mixture1D::scaled(double factor) const {
  Mixture1D out = *this;
  for (auto& r : out.locations) r *= factor;
  out.spread *= factor;
  return out;
}

std::size_t Mixture1D::nearest_mode(double x) const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < locations.size(); ++i)
    if (std::abs(x - locations[i]) < std::abs(x - locations[best])) best = i;
  return best;
}

Mixture1D make_mixture_1d(std::vector<double> weights, std::vector<double> locations, double spread) {
  if (weights.empty()) throw ValidationError("weights", "must not be empty");
  if (weights.size() != locations.size())
    throw ValidationError("locations", "must have as many entries as weights");
  double total = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw ValidationError("weights", "every weight must be positive");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ValidationError("weights", "must sum to 1");
  for (double r : locations)
    if (!std::isfinite(r)) throw ValidationError("locations", "must be finite");
  if (!(spread >= 0.0) || !std::isfinite(spread)) throw ValidationError("spread", "must be finite and non-negative");
  return {std::move(weights), std::move(locations), spread};
}

namespace {

struct Posterior1D {
  double z = 0.0;  // E[Z | y]
  double m = 0.0;  // E[M | y]
};

Posterior1D posterior_1d(const Mixture1D& mix, double tau, double y) {
  const double a = 1.0 - tau;
  const double s2 = mix.spread * mix.spread;
  const double v = a * a + tau * tau * s2;
  const std::size_t n = mix.weights.size();
  std::vector<double> logw(n);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y - tau * mix.locations[i];
    logw[i] = std::log(mix.weights[i]) - 0.5 * r * r / v;
    top = std::max(top, logw[i]);
  }
  double norm = 0.0;
  Posterior1D out;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = std::exp(logw[i] - top);
    const double r = y - tau * mix.locations[i];
    norm += w;
    out.z += w * (a * r / v);
    out.m += w * (mix.locations[i] + tau * s2 * r / v);
  }
  out.z /= norm;
  out.m /= norm;
  return out;
}

}  // namespace

double reduced_denoiser_1d(const Mixture1D& mix, double t, double nu) {
  if (!(t >= 0.0 && t <= 1.0)) throw ValidationError("t", "must lie in [0, 1]");
  if (t == 0.0) return nu;
  if (t == 1.0 && mix.spread == 0.0) return 0.0;
  return posterior_1d(mix, t, nu).z;
}

double reduced_velocity_1d(const Mixture1D& mix, double t, double y) {
  if (!(t >= 0.0 && t <= 1.0)) throw ValidationError("t", "must lie in [0, 1]");
  const auto post = posterior_1d(mix, t, y);
  return post.m - post.z;
}

ReducedEnsemble integrate_reduced(const Mixture1D& mix, const TimeSchedule& schedule, int K, int steps,
                                  std::uint64_t seed) {
  if (steps < 10) throw ValidationError("steps", "must be at least 10");
  if (K < 1) throw ValidationError("K", "must be positive");
  const auto grid = schedule.uniform_grid(steps + 1);
  auto rhs = [&](double t, double y) {
    const auto tv = schedule.tau(t);
    return tv.tau_dot * reduced_velocity_1d(mix, std::clamp(tv.tau, 0.0, 1.0), y);
  };

  ReducedEnsemble out;
  out.terminal.resize(static_cast<std::size_t>(K));
  parallel_for(static_cast<std::size_t>(K), [&](std::size_t k) {
    CounterRng rng(seed, k);
    double y = draw_normal(rng);
    for (std::size_t g = 0; g + 1 < grid.size(); ++g) {
      const double t = grid[g];
      const double h = grid[g + 1] - t;
      const double k1 = rhs(t, y);
      const double k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1);
      const double k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2);
      const double k4 = rhs(grid[g + 1], y + h * k3);
      y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (!std::isfinite(y))
        throw NumericalError("non-finite state at t = " + time_label(grid[g + 1]) + " in trajectory " +
                             std::to_string(k));
    }
    out.terminal[k] = y;
  });

  out.mode_fractions.assign(mix.weights.size(), 0.0);
  for (double y : out.terminal) out.mode_fractions[mix.nearest_mode(y)] += 1.0;
  for (double& f : out.mode_fractions) f /= static_cast<double>(K);
  return out;
}

}  // namespace gmflow
