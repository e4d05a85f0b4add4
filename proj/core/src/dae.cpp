#include "gmflow/dae.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <memory>
#include <numeric>
#include <sstream>

#include "gmflow/errors.hpp"
#include "gmflow/parallel.hpp"
#include "gmflow/rng.hpp"

namespace gmflow {
namespace {

constexpr double kTimeTol = 1e-12;

void check_dims(const SliceParams& theta, Eigen::Index d) {
  if (theta.u.size() != d || theta.w.size() != d)
    throw ValidationError("x", "dimension " + std::to_string(d) + " does not match the slice dimension " +
                                   std::to_string(theta.u.size()));
}

void check_batch(const SliceParams& theta, const Batch& batch) {
  if (batch.size() < 1) throw ValidationError("batch", "must not be empty");
  if (batch.x1.rows() != batch.xt.rows() || batch.x1.cols() != batch.xt.cols())
    throw ValidationError("batch", "x_t and x_1 blocks differ in shape");
  check_dims(theta, batch.xt.cols());
}

// Residual block R = f(X_t) - X_1 and activations phi.
struct Forward {
  StateMatrix R;
  Vector phi;
};

Forward forward_batch(const SliceParams& theta, const Batch& batch) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(theta.d()));
  Forward f;
  f.phi = ((batch.xt * theta.w) * inv_sqrt_d).array() + theta.b;
  f.phi = f.phi.array().tanh();
  f.R = theta.c * batch.xt - batch.x1;
  f.R.noalias() += f.phi * theta.u.transpose();
  return f;
}

std::string time_label(double t) {
  std::ostringstream os;
  os.precision(12);
  os << t;
  return os.str();
}

}  // namespace

bool SliceParams::finite() const {
  return std::isfinite(c) && std::isfinite(b) && u.allFinite() && w.allFinite();
}

void validate(const TrainConfig& config) {
  if (config.epochs < 1) throw ValidationError("train.epochs", "must be at least 1");
  if (!(config.step_size > 0.0) || !std::isfinite(config.step_size))
    throw ValidationError("train.step_size", "must be positive");
  if (!(config.final_step_size >= 0.0) || !std::isfinite(config.final_step_size))
    throw ValidationError("train.final_step_size", "must be non-negative");
  if (!(config.beta1 > 0.0 && config.beta1 < 1.0)) throw ValidationError("train.moment_decays", "must lie in (0, 1)");
  if (!(config.beta2 > 0.0 && config.beta2 < 1.0)) throw ValidationError("train.moment_decays", "must lie in (0, 1)");
  if (!(config.lambda >= 0.0) || !std::isfinite(config.lambda))
    throw ValidationError("train.lambda", "must be non-negative");
  if (!(config.ell >= 0.0) || !std::isfinite(config.ell)) throw ValidationError("train.ell", "must be non-negative");
  if (config.noise.kind == NoisePolicy::Kind::fixed_k && config.noise.k < 1)
    throw ValidationError("train.noise_policy.k", "must be at least 1");
}

Vector dae_forward(const SliceParams& theta, ConstVecRef x) {
  check_dims(theta, x.size());
  const double a = theta.w.dot(x) / std::sqrt(static_cast<double>(theta.d())) + theta.b;
  return theta.c * x + std::tanh(a) * theta.u;
}

double loss_and_gradient(const SliceParams& theta, const Batch& batch, double lambda, double ell, SliceGradient* g) {
  check_batch(theta, batch);
  const auto f = forward_batch(theta, batch);
  const double loss =
      batch.weight * f.R.squaredNorm() + 0.5 * lambda * theta.u.squaredNorm() + 0.5 * ell * theta.w.squaredNorm();
  if (g) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(theta.d()));
    const double two = 2.0 * batch.weight;
    const Vector ru = f.R * theta.u;
    const Vector gate = ru.array() * (1.0 - f.phi.array().square());
    g->c = two * f.R.cwiseProduct(batch.xt).sum();
    g->u = two * (f.R.transpose() * f.phi) + lambda * theta.u;
    g->b = two * gate.sum();
    g->w = (two * inv_sqrt_d) * (batch.xt.transpose() * gate) + ell * theta.w;
  }
  return loss;
}

double empirical_loss(const SliceParams& theta, const Batch& batch, double lambda, double ell) {
  return loss_and_gradient(theta, batch, lambda, ell, nullptr);
}

SliceGradient loss_gradient(const SliceParams& theta, const Batch& batch, double lambda, double ell) {
  SliceGradient g;
  loss_and_gradient(theta, batch, lambda, ell, &g);
  return g;
}

SliceParams exact_match_slice(const MixtureParams& params, const InterpolantCoeffs& k, double t) {
  const double s2 = params.sigma * params.sigma;
  const double D = k.alpha * k.alpha + s2 * k.beta * k.beta;
  if (!(D > 0.0)) throw NumericalError("exact_match_slice: alpha^2 + sigma^2 beta^2 must be positive");
  SliceParams theta;
  theta.t = t;
  theta.c = k.beta * s2 / D;
  theta.b = params.h;
  theta.u = (k.alpha * k.alpha / D) * params.mu;
  theta.w = (std::sqrt(static_cast<double>(params.d)) * k.beta / D) * params.mu;
  return theta;
}

SliceParams initial_slice(int d, std::uint64_t seed, double t) {
  if (d < 1) throw ValidationError("d", "must be positive");
  SliceParams theta;
  theta.t = t;
  theta.u.resize(d);
  theta.w.resize(d);
  CounterRng rng(derive_seed(seed, "init"), 0);
  fill_normal(rng, {theta.u.data(), static_cast<std::size_t>(d)});
  fill_normal(rng, {theta.w.data(), static_cast<std::size_t>(d)});
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  theta.u *= scale;
  theta.w *= scale;
  return theta;
}

Batch make_batch(const Dataset& data, const InterpolantCoeffs& coeffs, const TrainConfig& config, int epoch) {
  if (data.n() == 0) throw ValidationError("dataset", "must not be empty");
  const auto d = data.samples.front().x1.size();
  std::vector<const Sample*> order;
  order.reserve(data.n());
  for (const auto& s : data.samples) order.push_back(&s);
  std::sort(order.begin(), order.end(), [](const Sample* a, const Sample* b) { return a->id < b->id; });

  const bool fixed = config.noise.kind == NoisePolicy::Kind::fixed_k;
  const int draws = fixed ? config.noise.k : 1;
  const auto n = static_cast<Eigen::Index>(order.size());

  Batch batch;
  batch.weight = 1.0 / draws;
  batch.xt.resize(n * draws, d);
  batch.x1.resize(n * draws, d);
  Vector x0(d);
  for (int v = 0; v < draws; ++v) {
    const std::uint64_t key = fixed ? derive_seed(config.seed, {0x6e6f697365ULL, static_cast<std::uint64_t>(v)})
                                    : derive_seed(config.seed, {static_cast<std::uint64_t>(epoch)});
    for (Eigen::Index i = 0; i < n; ++i) {
      const Sample& s = *order[static_cast<std::size_t>(i)];
      if (fixed && v == 0 && s.x0.size() == d) {
        x0 = s.x0;
      } else {
        CounterRng rng(key, s.id);
        fill_normal(rng, {x0.data(), static_cast<std::size_t>(d)});
      }
      const Eigen::Index row = v * n + i;
      batch.x1.row(row) = s.x1.transpose();
      batch.xt.row(row) = (coeffs.alpha * x0 + coeffs.beta * s.x1).transpose();
    }
  }
  return batch;
}

SliceTrace train_slice_traced(const Dataset& data, const TimeSchedule& schedule, double t, const TrainConfig& config) {
  validate(config);
  if (!schedule.contains(t)) throw ValidationError("t", "outside the schedule domain: " + time_label(t));
  if (data.n() == 0) throw ValidationError("dataset", "must not be empty");
  const int d = static_cast<int>(data.samples.front().x1.size());
  const auto coeffs = coeffs_at(schedule, t);
  const bool fixed = config.noise.kind == NoisePolicy::Kind::fixed_k;

  SliceTrace trace;
  SliceParams& theta = trace.theta;
  theta = initial_slice(d, config.seed, t);
  trace.loss.reserve(static_cast<std::size_t>(config.epochs) + 1);

  // Adam state over (c, b, u, w).
  const Eigen::Index P = 2 + 2 * d;
  Vector m = Vector::Zero(P), v = Vector::Zero(P), grad(P);
  double b1t = 1.0, b2t = 1.0;

  SliceGradient g;
  Batch batch;
  if (fixed) batch = make_batch(data, coeffs, config, 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (!fixed) batch = make_batch(data, coeffs, config, epoch);
    const double loss = loss_and_gradient(theta, batch, config.lambda, config.ell, &g);
    if (!std::isfinite(loss))
      throw NumericalError("training diverged at t = " + time_label(t) + ", epoch " + std::to_string(epoch));
    trace.loss.push_back(loss);
    grad(0) = g.c;
    grad(1) = g.b;
    grad.segment(2, d) = g.u;
    grad.segment(2 + d, d) = g.w;

    b1t *= config.beta1;
    b2t *= config.beta2;
    m = config.beta1 * m + (1.0 - config.beta1) * grad;
    v = config.beta2 * v + (1.0 - config.beta2) * grad.cwiseAbs2();
    double base = config.step_size;
    if (config.final_step_size > 0.0 && config.epochs > 1)
      base *= std::pow(config.final_step_size / config.step_size, static_cast<double>(epoch) / (config.epochs - 1));
    const double lr = base * std::sqrt(1.0 - b2t) / (1.0 - b1t);
    const Vector step = lr * (m.array() / (v.array().sqrt() + 1e-8)).matrix();

    theta.c -= step(0);
    theta.b -= step(1);
    theta.u -= step.segment(2, d);
    theta.w -= step.segment(2 + d, d);
    if (!theta.finite())
      throw NumericalError("training diverged at t = " + time_label(t) + ", epoch " + std::to_string(epoch));
  }
  if (!fixed) batch = make_batch(data, coeffs, config, config.epochs);
  trace.loss.push_back(empirical_loss(theta, batch, config.lambda, config.ell));
  return trace;
}

SliceParams train_slice(const Dataset& data, const TimeSchedule& schedule, double t, const TrainConfig& config) {
  return train_slice_traced(data, schedule, t, config).theta;
}

std::uint64_t slice_seed(std::uint64_t seed, std::size_t slice_index) {
  return derive_seed(seed, {static_cast<std::uint64_t>(slice_index)});
}

DenoiserSchedule train_all(const Dataset& data, const TimeSchedule& schedule, const std::vector<double>& grid,
                           const TrainConfig& config) {
  validate(config);
  if (grid.empty()) throw ValidationError("grid", "must not be empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!schedule.contains(grid[i])) throw ValidationError("grid", "time " + time_label(grid[i]) + " outside domain");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw ValidationError("grid", "must be strictly ascending");
  }
  DenoiserSchedule sched;
  sched.grid = grid;
  sched.slices.resize(grid.size());
  parallel_for(grid.size(), [&](std::size_t i) {
    TrainConfig local = config;
    local.seed = slice_seed(config.seed, i);
    try {
      sched.slices[i] = train_slice(data, schedule, grid[i], local);
    } catch (const NumericalError& e) {
      throw NumericalError("slice " + std::to_string(i) + ": " + e.what());
    }
  });
  return sched;
}

const SliceParams& slice_at(const DenoiserSchedule& sched, double t) {
  if (sched.grid.empty() || sched.grid.size() != sched.slices.size())
    throw ValidationError("schedule", "grid and slices must be non-empty and of equal length");
  const double lo = sched.grid.front(), hi = sched.grid.back();
  const double tol = kTimeTol * std::max(1.0, std::abs(t));
  if (t < lo - tol || t > hi + tol) throw ValidationError("t", "outside the trained grid: " + time_label(t));
  auto it = std::upper_bound(sched.grid.begin(), sched.grid.end(), t + tol);
  const auto idx = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, (it - sched.grid.begin()) - 1));
  return sched.slices[idx];
}

void learned_velocity(const DenoiserSchedule& sched, const TimeSchedule& schedule, double t, ConstVecRef x,
                      VecRef out) {
  const auto& theta = slice_at(sched, t);
  check_dims(theta, x.size());
  const auto k = coeffs_at(schedule, std::clamp(t, schedule.t_begin(), schedule.t_end()));
  const double a = theta.w.dot(x) / std::sqrt(static_cast<double>(theta.d())) + theta.b;
  const double th = std::tanh(a);
  if (k.alpha > 1e-12) {
    // (beta' - alpha' beta / alpha) f + (alpha'/alpha) x
    const double gf = k.beta_dot - k.alpha_dot * k.beta / k.alpha;
    const double gx = k.alpha_dot / k.alpha;
    out.noalias() = (gf * theta.c + gx) * x + (gf * th) * theta.u;
  } else {
    out.noalias() = (k.beta_dot * theta.c) * x + (k.beta_dot * th) * theta.u;
  }
}

Vector learned_velocity(const DenoiserSchedule& sched, const TimeSchedule& schedule, double t, ConstVecRef x) {
  Vector out(x.size());
  learned_velocity(sched, schedule, t, x, out);
  return out;
}

VelocityField learned_field(const DenoiserSchedule& sched, const TimeSchedule& schedule) {
  auto owned = std::make_shared<const DenoiserSchedule>(sched);
  return [owned, schedule](double t, ConstVecRef x, VecRef out) { learned_velocity(*owned, schedule, t, x, out); };
}

nlohmann::json to_json(const DenoiserSchedule& sched, std::uint64_t config_hash) {
  nlohmann::json j;
  j["d"] = sched.slices.empty() ? 0 : sched.slices.front().d();
  j["grid"] = sched.grid;
  j["config_hash"] = config_hash;
  auto& slices = j["slices"] = nlohmann::json::array();
  for (const auto& s : sched.slices) {
    slices.push_back({{"t", s.t},
                      {"c", s.c},
                      {"b", s.b},
                      {"u", std::vector<double>(s.u.data(), s.u.data() + s.u.size())},
                      {"w", std::vector<double>(s.w.data(), s.w.data() + s.w.size())}});
  }
  return j;
}

DenoiserSchedule denoiser_schedule_from_json(const nlohmann::json& j) {
  DenoiserSchedule sched;
  try {
    const int d = j.at("d").get<int>();
    sched.grid = j.at("grid").get<std::vector<double>>();
    for (const auto& s : j.at("slices")) {
      SliceParams p;
      p.t = s.at("t").get<double>();
      p.c = s.at("c").get<double>();
      p.b = s.at("b").get<double>();
      const auto u = s.at("u").get<std::vector<double>>();
      const auto w = s.at("w").get<std::vector<double>>();
      if (static_cast<int>(u.size()) != d || static_cast<int>(w.size()) != d)
        throw ValidationError("slices", "vector length does not match d");
      p.u = Eigen::Map<const Vector>(u.data(), d);
      p.w = Eigen::Map<const Vector>(w.data(), d);
      sched.slices.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("checkpoint", e.what());
  }
  if (sched.slices.size() != sched.grid.size()) throw ValidationError("slices", "count does not match grid");
  return sched;
}

}  // namespace gmflow
