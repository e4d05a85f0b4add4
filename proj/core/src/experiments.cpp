#include "gmflow/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "gmflow/errors.hpp"
#include "gmflow/parallel.hpp"
#include "gmflow/rng.hpp"

namespace gmflow {
namespace {

constexpr double kSaturatedBias = 40.0;  // tanh(40) == 1 in double precision

Vector sum_signed(const Dataset& data, bool base_noise) {
  const auto d = data.samples.front().z.size();
  Vector acc = Vector::Zero(d);
  for (const auto& s : data.samples) acc += s.s * (base_noise ? s.x0 : s.z);
  return acc;
}

void require_two_mode(const TimeSchedule& schedule) {
  if (schedule.kind() != ScheduleKind::two_mode_dilated)
    throw ValidationError("schedule.kind", "theory predictions need the two_mode_dilated schedule");
}

double mean_abs_projection(const StateMatrix& delta, const Vector& dir, double scale) {
  const Vector proj = delta * dir;
  return proj.cwiseAbs().mean() * scale;
}

}  // namespace

nlohmann::json ExperimentReport::to_json(bool include_wall_time) const {
  nlohmann::json j;
  j["name"] = name;
  j["config"] = config;
  j["config_hash"] = config_hash;
  j["metrics"] = metrics;
  j["seeds"] = seeds;
  nlohmann::json files = nlohmann::json::array();
  for (const auto& [stem, series] : curves) files.push_back(stem + ".csv");
  j["curves"] = files;
  if (include_wall_time) j["wall_seconds"] = wall_seconds;
  return j;
}

std::uint64_t config_hash(const nlohmann::json& config) {
  const std::string text = config.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double estimate_p(const StateMatrix& states, const MixtureParams& params) {
  if (states.rows() == 0) throw ValidationError("ensemble", "is empty");
  if (states.cols() != params.d) throw ValidationError("ensemble", "dimension does not match the mixture");
  const Vector proj = states * params.mu;
  return static_cast<double>((proj.array() >= 0.0).count()) / static_cast<double>(states.rows());
}

double estimate_p(const TrajectoryEnsemble& ensemble, const MixtureParams& params) {
  if (ensemble.checkpoint_states.empty()) throw ValidationError("ensemble", "is empty");
  return estimate_p(ensemble.terminal(), params);
}

double estimate_sigma(const StateMatrix& states, const MixtureParams& params) {
  if (states.rows() == 0) throw ValidationError("ensemble", "is empty");
  return std::sqrt(projection_stats(params, states, 0.0).orth_variance);
}

double estimate_sigma(const TrajectoryEnsemble& ensemble, const MixtureParams& params) {
  if (ensemble.checkpoint_states.empty()) throw ValidationError("ensemble", "is empty");
  return estimate_sigma(ensemble.terminal(), params);
}

std::vector<double> positive_fraction_curve(const TrajectoryEnsemble& ensemble) {
  if (ensemble.projections.size() == 0) throw ValidationError("ensemble", "has no recorded projections");
  std::vector<double> out(static_cast<std::size_t>(ensemble.projections.cols()));
  for (Eigen::Index g = 0; g < ensemble.projections.cols(); ++g)
    out[static_cast<std::size_t>(g)] = static_cast<double>((ensemble.projections.col(g).array() >= 0.0).count()) /
                                       static_cast<double>(ensemble.projections.rows());
  return out;
}

GapTable exact_vs_learned_gap(const MixtureParams& params, const Dataset& data, const TimeSchedule& schedule,
                              const DenoiserSchedule& learned, int K, std::uint64_t seed, ExactReference reference) {
  if (!data.has_paired_noise()) throw ValidationError("dataset", "gap table needs paired base noise (xi)");
  const int d = params.d;
  const double sqrt_d = std::sqrt(static_cast<double>(d));
  const double n = static_cast<double>(data.n());

  const auto initial = sample_noise(d, K, seed);
  const auto reference_field = reference == ExactReference::continuous
                                   ? exact_field(params, schedule)
                                   : learned_field(exact_slices(params, schedule, learned.grid), schedule);
  const auto exact = integrate_states(reference_field, initial, learned.grid);
  const auto approx = integrate_states(learned_field(learned, schedule), initial, learned.grid);
  const StateMatrix delta = exact.terminal() - approx.terminal();

  const Vector eta = data.eta;
  const Vector eta_signed = signed_eta(data, params.sigma);
  const Vector xi = *data.xi;

  GapTable g;
  g.mu = mean_abs_projection(delta, params.mu.normalized(), 1.0 / sqrt_d);
  g.eta = mean_abs_projection(delta, eta.normalized(), 1.0 / sqrt_d);
  g.eta_signed = mean_abs_projection(delta, eta_signed.normalized(), 1.0 / sqrt_d);
  g.xi = mean_abs_projection(delta, xi.normalized(), 1.0 / sqrt_d);
  const double s2 = params.sigma * params.sigma;
  g.zeta_eta = mean_abs_projection(delta, eta, 1.0 / (s2 * n * d));
  g.zeta_eta_signed = mean_abs_projection(delta, eta_signed, 1.0 / (s2 * n * d));
  g.zeta_xi = mean_abs_projection(delta, xi, 1.0 / (n * d));

  // Orthonormal basis of span(mu, eta, eta_signed, xi), then random complement directions.
  std::vector<Vector> basis;
  for (const Vector* v : {&params.mu, &eta, &eta_signed, &xi}) {
    Vector e = *v;
    for (const auto& q : basis) e -= q.dot(e) * q;
    if (e.norm() > 1e-9 * v->norm()) basis.push_back(e.normalized());
  }
  CounterRng rng(derive_seed(seed, "complement"), 0);
  Vector w(d);
  for (int k = 0; k < 5; ++k) {
    fill_normal(rng, {w.data(), static_cast<std::size_t>(d)});
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& q : basis) w -= q.dot(w) * q;
    g.complement.push_back(mean_abs_projection(delta, w.normalized(), 1.0 / sqrt_d));
  }
  g.complement_mean = 0.0;
  for (double v : g.complement) g.complement_mean += v / 5.0;
  return g;
}

DenoiserSchedule exact_slices(const MixtureParams& params, const TimeSchedule& schedule, const std::vector<double>& grid) {
  DenoiserSchedule out;
  out.grid = grid;
  for (double t : grid) out.slices.push_back(exact_match_slice(params, coeffs_at(schedule, t), t));
  return out;
}

OverlapSet predict_overlaps(const TimeSchedule& schedule, double t, double n, double p, double sigma, double lambda,
                            double ell, SecondPhaseForm form, NoisePairing pairing, const SaddleConfig& saddle) {
  require_two_mode(schedule);
  OverlapSet o;
  const bool first = t <= 1.0;
  if (std::isinf(n)) {
    o = first ? limit_overlaps(Phase::first, p, sigma, schedule.kappa() * t)
              : limit_overlaps(Phase::second, p, sigma, schedule.tau(t).tau, form);
  } else if (first) {
    o = solve_first_phase(n, p, sigma, lambda, ell, schedule.kappa() * t, saddle);
  } else {
    o = solve_second_phase(n, sigma, lambda, schedule.tau(t).tau, form, pairing);
  }
  o.t = t;
  return o;
}

DenoiserSchedule theory_slices(const MixtureParams& params, const Dataset& data, const TimeSchedule& schedule,
                               const std::vector<double>& grid, const TheorySliceOptions& options) {
  require_two_mode(schedule);
  if (data.n() == 0) throw ValidationError("dataset", "must not be empty");
  const bool paired = options.pairing == NoisePairing::paired;
  if (paired && !data.has_paired_noise()) throw ValidationError("dataset", "paired theory slices need base noise");
  const double n = static_cast<double>(data.n());
  const Vector sz = sum_signed(data, false);
  const Vector sx0 = paired ? sum_signed(data, true) : Vector::Zero(params.d);

  DenoiserSchedule out;
  out.grid = grid;
  out.slices.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double t = grid[i];
    const auto k = coeffs_at(schedule, t);
    const auto o = predict_overlaps(schedule, t, n, params.p, params.sigma, options.lambda, options.ell, options.form,
                                    options.pairing, options.saddle);
    // Start from the exact denoiser at this (finite-d) time and replace the
    // parts the finite-n prediction moves.
    SliceParams s = exact_match_slice(params, k, t);
    if (o.phase == Phase::first) {
      const double scale = k.alpha * k.alpha / (k.alpha * k.alpha + params.sigma * params.sigma * k.beta * k.beta);
      s.u = (o.m * scale) * params.mu + o.q_eta * sz;
      const double kt = schedule.kappa() * t;
      if (kt > 0.0) s.w *= o.omega / kt;
      s.b = o.saturated ? std::copysign(kSaturatedBias, o.b) : o.b;
    } else {
      s.c = o.c;
      s.u = o.m * params.mu + o.q_eta * sz + o.q_xi * sx0;
    }
    out.slices[i] = std::move(s);
  }
  return out;
}

MseCurve mse_empirical(const DenoiserSchedule& learned, const Dataset& data, const MixtureParams& params,
                       const TimeSchedule& schedule, int test_draws, std::uint64_t seed) {
  if (test_draws < 1) throw ValidationError("test_draws", "must be positive");
  if (data.n() == 0) throw ValidationError("dataset", "must not be empty");
  const auto test = sample_dataset(params, test_draws, derive_seed(seed, "test"));
  const auto train_key = derive_seed(seed, "train-noise");
  const int d = params.d;

  MseCurve curve;
  curve.t = learned.grid;
  curve.train.resize(learned.grid.size());
  curve.test.resize(learned.grid.size());
  parallel_for(learned.grid.size(), [&](std::size_t i) {
    const auto& theta = learned.slices[i];
    const auto k = coeffs_at(schedule, learned.grid[i]);
    Vector x0(d), xt(d);
    auto err = [&](const Sample& s, bool use_own) {
      if (use_own && s.x0.size() == d) {
        x0 = s.x0;
      } else {
        CounterRng rng(train_key, s.id);
        fill_normal(rng, {x0.data(), static_cast<std::size_t>(d)});
      }
      xt = k.alpha * x0 + k.beta * s.x1;
      return (dae_forward(theta, xt) - s.x1).squaredNorm() / d;
    };
    double tr = 0.0, te = 0.0;
    for (const auto& s : data.samples) tr += err(s, true);
    for (const auto& s : test.samples) te += err(s, true);
    curve.train[i] = tr / static_cast<double>(data.n());
    curve.test[i] = te / static_cast<double>(test.n());
  });
  return curve;
}

Series theory_curve(const TimeSchedule& schedule, const std::vector<double>& grid, double n, double p, double sigma,
                    double lambda, double ell, SecondPhaseForm form, NoisePairing pairing, const SaddleConfig& saddle) {
  require_two_mode(schedule);
  std::vector<double> t, m, omega, c, b, q, tr, te;
  std::vector<std::string> phase;
  const auto regime = std::isinf(n) ? SampleRegime::infinite : SampleRegime::finite;
  for (double time : grid) {
    const auto o = predict_overlaps(schedule, time, n, p, sigma, lambda, ell, form, pairing, saddle);
    t.push_back(time);
    phase.push_back(to_string(o.phase));
    m.push_back(o.m);
    omega.push_back(o.omega);
    c.push_back(o.c);
    b.push_back(o.b);
    q.push_back(o.q);
    tr.push_back(mse_theory(o, p, sigma, MseKind::train, regime));
    te.push_back(mse_theory(o, p, sigma, MseKind::test, regime));
  }
  return {{"t", t},        {"phase", phase}, {"m", m},         {"omega", omega},   {"c", c},
          {"b", b},        {"q", q},         {"mse_train", tr}, {"mse_test", te}};
}

FigureOneResult figure1_run(const FigureOneConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  validate(cfg.train);
  if (cfg.grid_points < 2) throw ValidationError("schedule.grid_points", "must be at least 2");
  if (cfg.K < 1) throw ValidationError("montecarlo.K", "must be positive");
  if (cfg.n < 1) throw ValidationError("train.n", "must be positive");
  const double work = static_cast<double>(cfg.d) * cfg.n * cfg.grid_points * cfg.train.epochs;
  if (work > cfg.budget)
    throw ValidationError("budget", "d * n * grid_points * epochs = " + std::to_string(work) + " exceeds " +
                                        std::to_string(cfg.budget));

  FigureOneResult res;
  res.params = make_mixture(cfg.d, cfg.p, cfg.sigma);
  const auto data_seed = derive_seed(cfg.seed, "dataset");
  res.data = sample_dataset(res.params, cfg.n, data_seed, {cfg.labels, true});

  const auto identity = TimeSchedule::identity();
  const auto dilated = TimeSchedule::two_mode(cfg.kappa, cfg.d);
  const auto traj_seed = derive_seed(cfg.seed, "trajectories");
  EnsembleOptions opts;
  opts.mu = res.params.mu;

  auto run = [&](const TimeSchedule& sched, const char* label, DenoiserSchedule& learned, TrajectoryEnsemble& ens) {
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, std::string("train-") + label);
    const auto grid = sched.uniform_grid(cfg.grid_points);
    learned = train_all(res.data, sched, grid, tc);
    ens = integrate_ensemble(learned_field(learned, sched), cfg.d, cfg.K, grid, traj_seed, opts);
    res.report.seeds[std::string("train_") + label] = tc.seed;
  };
  run(identity, "identity", res.identity_schedule, res.identity_ensemble);
  run(dilated, "dilated", res.dilated_schedule, res.dilated_ensemble);

  auto& r = res.report;
  r.name = "figure1";
  r.seeds["master"] = cfg.seed;
  r.seeds["dataset"] = data_seed;
  r.seeds["trajectories"] = traj_seed;
  const double p_dil = estimate_p(res.dilated_ensemble, res.params);
  const double p_id = estimate_p(res.identity_ensemble, res.params);
  r.metrics["p_hat_dilated"] = p_dil;
  r.metrics["p_hat_identity"] = p_id;
  r.metrics["abs_error_dilated"] = std::abs(p_dil - cfg.p);
  r.metrics["abs_error_identity"] = std::abs(p_id - cfg.p);
  r.metrics["dataset_positive_fraction"] = res.data.positive_fraction();
  r.metrics["sigma_hat_dilated"] = estimate_sigma(res.dilated_ensemble, res.params);
  r.metrics["sigma_hat_identity"] = estimate_sigma(res.identity_ensemble, res.params);
  r.curves.push_back({"positive_fraction_identity",
                      {{"t", res.identity_ensemble.grid}, {"p_pos", positive_fraction_curve(res.identity_ensemble)}}});
  r.curves.push_back({"positive_fraction_dilated",
                      {{"t", res.dilated_ensemble.grid}, {"p_pos", positive_fraction_curve(res.dilated_ensemble)}}});
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

UTurnCurve uturn_curve(const DenoiserSchedule& learned, const MixtureParams& params, const TimeSchedule& schedule,
                       const std::vector<double>& t0_list, int trials, std::uint64_t seed) {
  if (trials < 1) throw ValidationError("trials", "must be positive");
  if (learned.grid.empty()) throw ValidationError("schedule", "learned schedule is empty");
  const double t_end = learned.grid.back();
  for (double t0 : t0_list)
    if (t0 < learned.grid.front() || t0 > t_end) throw ValidationError("t0_list", "entries must lie on the grid span");

  const auto draws = sample_dataset(params, trials, derive_seed(seed, "uturn-data"));
  const auto field = learned_field(learned, schedule);
  const int d = params.d;

  UTurnCurve out;
  out.t0 = t0_list;
  const auto gen = integrate_ensemble(field, d, trials, learned.grid, derive_seed(seed, "uturn-generate"));
  out.p_hat = estimate_p(gen, params);
  for (const auto& s : draws.samples) (s.s > 0 ? out.plus_trials : out.minus_trials) += 1;

  for (double t0 : t0_list) {
    const auto k = coeffs_at(schedule, t0);
    StateMatrix start(trials, d);
    for (int i = 0; i < trials; ++i) {
      const auto& s = draws.samples[static_cast<std::size_t>(i)];
      start.row(i) = (k.alpha * s.x0 + k.beta * s.x1).transpose();
    }
    std::vector<double> sub{t0};
    for (double g : learned.grid)
      if (g > t0 + 1e-12) sub.push_back(g);
    StateMatrix terminal;
    if (sub.size() < 2) {
      terminal = start;
    } else {
      terminal = integrate_states(field, std::move(start), sub).terminal();
    }
    const Vector proj = terminal * params.mu;
    int kept = 0, kept_plus = 0, kept_minus = 0;
    for (int i = 0; i < trials; ++i) {
      const int s = draws.samples[static_cast<std::size_t>(i)].s;
      const int end = proj(i) >= 0.0 ? 1 : -1;
      if (end == s) {
        ++kept;
        (s > 0 ? kept_plus : kept_minus) += 1;
      }
    }
    out.pooled.push_back(static_cast<double>(kept) / trials);
    out.plus.push_back(out.plus_trials ? static_cast<double>(kept_plus) / out.plus_trials : OverlapSet::nan);
    out.minus.push_back(out.minus_trials ? static_cast<double>(kept_minus) / out.minus_trials : OverlapSet::nan);
  }
  return out;
}

namespace {

// Seed mean of the scalar overlaps; a field that is NaN everywhere stays NaN.
OverlapSet mean_overlaps(const std::vector<OverlapSet>& sets) {
  OverlapSet out = sets.front();
  auto avg = [&](double OverlapSet::*field) {
    double acc = 0.0;
    for (const auto& o : sets) acc += o.*field;
    out.*field = acc / static_cast<double>(sets.size());
  };
  for (auto f : {&OverlapSet::m, &OverlapSet::omega, &OverlapSet::r, &OverlapSet::q, &OverlapSet::q_xi,
                 &OverlapSet::q_eta, &OverlapSet::p_eta, &OverlapSet::p_xi, &OverlapSet::c, &OverlapSet::b})
    avg(f);
  return out;
}

void track(double& worst, double measured, double predicted) {
  if (std::isfinite(measured) && std::isfinite(predicted)) worst = std::max(worst, std::abs(measured - predicted));
}

}  // namespace

double OverlapSweepResult::max_abs() const {
  return std::max({max_abs_m, max_abs_omega, max_abs_c, max_abs_b, max_abs_q});
}

Series OverlapSweepResult::table() const {
  std::vector<double> t;
  std::vector<std::string> phase;
  std::vector<double> cols[10];
  for (std::size_t i = 0; i < measured.size(); ++i) {
    const auto& a = measured[i];
    const auto& b = predicted[i];
    t.push_back(a.t);
    phase.push_back(to_string(a.phase));
    const double v[10] = {a.m, b.m, a.omega, b.omega, a.c, b.c, a.b, b.b, a.q, b.q};
    for (int k = 0; k < 10; ++k) cols[k].push_back(v[k]);
  }
  return {{"t", t},
          {"phase", phase},
          {"m_measured", cols[0]},
          {"m_predicted", cols[1]},
          {"omega_measured", cols[2]},
          {"omega_predicted", cols[3]},
          {"c_measured", cols[4]},
          {"c_predicted", cols[5]},
          {"b_measured", cols[6]},
          {"b_predicted", cols[7]},
          {"q_measured", cols[8]},
          {"q_predicted", cols[9]}};
}

OverlapSweepResult overlap_sweep(const OverlapSweepConfig& cfg) {
  validate(cfg.train);
  if (cfg.seeds < 1) throw ValidationError("sweep.seeds", "must be positive");
  if (cfg.times.empty()) throw ValidationError("sweep.times", "must not be empty");
  if (cfg.second_phase_epochs < 0) throw ValidationError("sweep.second_phase_epochs", "must be non-negative");
  const auto params = make_mixture(cfg.d, cfg.p, cfg.sigma);
  const auto schedule = TimeSchedule::two_mode(cfg.kappa, cfg.d);
  for (double t : cfg.times)
    if (!schedule.contains(t)) throw ValidationError("sweep.times", "outside the schedule domain");
  const double lambda = std::isnan(cfg.lambda) ? cfg.train.lambda / 2.0 : cfg.lambda;
  const double ell = std::isnan(cfg.ell) ? cfg.train.ell / 2.0 : cfg.ell;
  const auto nt = cfg.times.size();

  std::vector<std::vector<OverlapSet>> measured(nt), predicted(nt);
  for (int r = 0; r < cfg.seeds; ++r) {
    const auto rs = derive_seed(cfg.seed, {static_cast<std::uint64_t>(r)});
    const auto data = sample_dataset(params, cfg.n, derive_seed(rs, "dataset"), {cfg.labels, true});
    const double p_data = cfg.empirical_fraction ? data.positive_fraction() : cfg.p;
    std::vector<OverlapSet> meas(nt), pred(nt);
    parallel_for(nt, [&](std::size_t i) {
      const double t = cfg.times[i];
      const Phase phase = t <= 1.0 ? Phase::first : Phase::second;
      TrainConfig tc = cfg.train;
      tc.seed = slice_seed(derive_seed(rs, "train"), i);
      if (phase == Phase::second && cfg.second_phase_epochs > 0) tc.epochs = cfg.second_phase_epochs;
      meas[i] = measure_overlaps(train_slice(data, schedule, t, tc), data, params, phase);
      meas[i].t = t;
      pred[i] = predict_overlaps(schedule, t, static_cast<double>(cfg.n), p_data, cfg.sigma, lambda, ell, cfg.form,
                                 cfg.pairing, cfg.saddle);
    });
    for (std::size_t i = 0; i < nt; ++i) {
      measured[i].push_back(meas[i]);
      predicted[i].push_back(pred[i]);
    }
  }

  OverlapSweepResult res;
  for (std::size_t i = 0; i < nt; ++i) {
    res.measured.push_back(mean_overlaps(measured[i]));
    res.predicted.push_back(mean_overlaps(predicted[i]));
    const auto& a = res.measured.back();
    const auto& b = res.predicted.back();
    track(res.max_abs_m, a.m, b.m);
    track(res.max_abs_omega, a.omega, b.omega);
    track(res.max_abs_c, a.c, b.c);
    track(res.max_abs_b, a.b, b.b);
    track(res.max_abs_q, a.q, b.q);
  }
  return res;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ValidationError("slope", "needs two or more matching points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double k = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0 && y[i] > 0.0)) throw ValidationError("slope", "log-log fit needs positive values");
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (k * sxy - sx * sy) / (k * sxx - sx * sx);
}

Series GapScalingResult::table() const {
  std::vector<double> nn, span, mu, eta, eta_s, xi, comp, ze, zx;
  for (std::size_t i = 0; i < n.size(); ++i) {
    const auto& g = gaps[i];
    nn.push_back(n[i]);
    span.push_back(g.span());
    mu.push_back(g.mu);
    eta.push_back(g.eta);
    eta_s.push_back(g.eta_signed);
    xi.push_back(g.xi);
    comp.push_back(g.complement_mean);
    ze.push_back(g.zeta_eta_signed);
    zx.push_back(g.zeta_xi);
  }
  return {{"n", nn},           {"span", span}, {"mu", mu},         {"eta", eta},         {"eta_signed", eta_s},
          {"xi", xi},          {"complement", comp}, {"zeta_eta_signed", ze}, {"zeta_xi", zx}};
}

GapScalingResult gap_scaling(const GapScalingConfig& cfg) {
  if (cfg.n_list.empty()) throw ValidationError("sweep.n_list", "must not be empty");
  if (cfg.repeats < 1) throw ValidationError("sweep.repeats", "must be positive");
  if (cfg.K < 1) throw ValidationError("montecarlo.K", "must be positive");
  if (cfg.grid_points < 2) throw ValidationError("schedule.grid_points", "must be at least 2");
  const auto params = make_mixture(cfg.d, cfg.p, cfg.sigma);
  const auto schedule = TimeSchedule::two_mode(cfg.kappa, cfg.d);
  const auto grid = schedule.uniform_grid(cfg.grid_points);

  GapScalingResult res;
  std::vector<double> xs, ys;
  for (int n : cfg.n_list) {
    if (n < 1) throw ValidationError("sweep.n_list", "entries must be positive");
    GapTable acc;
    acc.complement.assign(5, 0.0);
    const double w = 1.0 / cfg.repeats;
    for (int r = 0; r < cfg.repeats; ++r) {
      const auto rs = derive_seed(cfg.seed, {static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(r)});
      const auto data = sample_dataset(params, n, derive_seed(rs, "dataset"));
      const auto slices = theory_slices(params, data, schedule, grid, cfg.theory);
      const auto g = exact_vs_learned_gap(params, data, schedule, slices, cfg.K, derive_seed(rs, "gap"), cfg.reference);
      acc.mu += w * g.mu;
      acc.eta += w * g.eta;
      acc.eta_signed += w * g.eta_signed;
      acc.xi += w * g.xi;
      for (std::size_t k = 0; k < 5; ++k) acc.complement[k] += w * g.complement[k];
      acc.complement_mean += w * g.complement_mean;
      acc.zeta_eta += w * g.zeta_eta;
      acc.zeta_eta_signed += w * g.zeta_eta_signed;
      acc.zeta_xi += w * g.zeta_xi;
    }
    res.n.push_back(n);
    res.gaps.push_back(acc);
    xs.push_back(n);
    ys.push_back(acc.span());
  }
  res.span_slope = xs.size() >= 2 ? loglog_slope(xs, ys) : OverlapSet::nan;
  return res;
}

}  // namespace gmflow
