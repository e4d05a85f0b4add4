#include "gmflow/runner.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "gmflow/csv.hpp"
#include "gmflow/parallel.hpp"
#include "gmflow/rng.hpp"

namespace gmflow {
namespace {

using Issues = std::vector<std::pair<std::string, std::string>>;
using json = nlohmann::json;

const std::map<std::string, ExperimentKind> kExperiments = {
    {"figure1", ExperimentKind::figure1},         {"overlaps_sweep", ExperimentKind::overlaps_sweep},
    {"mse_sweep", ExperimentKind::mse_sweep},     {"gap_scaling", ExperimentKind::gap_scaling},
    {"uturn", ExperimentKind::uturn},             {"reduced_ode", ExperimentKind::reduced_ode},
    {"theory_only", ExperimentKind::theory_only},
};

std::string join_fields(const Issues& issues) {
  std::string out;
  for (const auto& [field, msg] : issues) out += (out.empty() ? "" : ", ") + field;
  return out;
}

std::string join_messages(const Issues& issues) {
  std::string out;
  for (const auto& [field, msg] : issues) out += (out.empty() ? "" : "; ") + field + ": " + msg;
  return out;
}

// Reads one config section, records every problem, and echoes the resolved values.
class Section {
 public:
  Section(const json& root, const std::string& name, Issues& issues, json& echo)
      : name_(name), issues_(issues), echo_(echo[name]) {
    echo_ = json::object();
    if (!root.contains(name)) return;
    if (!root[name].is_object()) {
      issue("", "must be an object");
      return;
    }
    obj_ = &root[name];
  }

  template <class T>
  void get(const char* key, T& out, std::function<bool(const T&)> ok = {}, const char* msg = "out of range") {
    seen_.insert(key);
    if (obj_ && obj_->contains(key)) {
      try {
        out = (*obj_)[key].get<T>();
      } catch (const json::exception&) {
        issue(key, "has the wrong type");
        return;
      }
      if (ok && !ok(out)) issue(key, msg);
    }
    echo_[key] = out;
  }

  template <class E>
  void get_enum(const char* key, E& out, const std::map<std::string, E>& names) {
    seen_.insert(key);
    std::string text;
    for (const auto& [k, v] : names)
      if (v == out) text = k;
    if (obj_ && obj_->contains(key)) {
      if (!(*obj_)[key].is_string()) {
        issue(key, "must be a string");
        return;
      }
      text = (*obj_)[key].get<std::string>();
      auto it = names.find(text);
      if (it == names.end()) {
        issue(key, "unknown value '" + text + "'");
        return;
      }
      out = it->second;
    }
    echo_[key] = text;
  }

  // Positive number or the string "inf".
  void get_count_or_inf(const char* key, double& out) {
    seen_.insert(key);
    if (obj_ && obj_->contains(key)) {
      const auto& v = (*obj_)[key];
      if (v.is_string() && v.get<std::string>() == "inf") {
        out = std::numeric_limits<double>::infinity();
      } else if (v.is_number() && v.get<double>() > 0.0) {
        out = v.get<double>();
      } else {
        issue(key, "must be a positive number or \"inf\"");
        return;
      }
    }
    if (std::isinf(out))
      echo_[key] = "inf";
    else
      echo_[key] = out;
  }

  void issue(const std::string& key, const std::string& msg) {
    issues_.emplace_back(key.empty() ? name_ : name_ + "." + key, msg);
  }

  void reject_unknown() {
    if (!obj_) return;
    for (const auto& [k, v] : obj_->items())
      if (!seen_.count(k)) issue(k, "unknown field");
  }

 private:
  std::string name_;
  Issues& issues_;
  json& echo_;
  const json* obj_ = nullptr;
  std::set<std::string> seen_;
};

bool positive_int(const int& v) { return v > 0; }
bool positive(const double& v) { return v > 0.0 && std::isfinite(v); }

template <class F>
void collect(Issues& issues, const std::string& prefix, F&& f) {
  try {
    f();
  } catch (const ValidationError& e) {
    std::string field = e.field();
    if (!prefix.empty() && field.rfind(prefix, 0) != 0) field = prefix + field;
    for (const auto& [f2, m] : issues)
      if (f2 == field) return;
    const std::string what = e.what();
    const auto colon = what.find(": ");
    issues.emplace_back(field, colon == std::string::npos ? what : what.substr(colon + 2));
  }
}

bool needs_two_mode(ExperimentKind k) {
  return k == ExperimentKind::overlaps_sweep || k == ExperimentKind::mse_sweep || k == ExperimentKind::gap_scaling ||
         k == ExperimentKind::theory_only;
}

std::vector<double> default_sweep_times() {
  std::vector<double> t;
  for (int i = 1; i <= 12; ++i) t.push_back(i / 6.0);
  return t;
}

std::vector<double> default_t0_list(const std::vector<double>& grid) {
  std::vector<double> out;
  const std::size_t last = grid.size() - 1;
  for (int i = 0; i <= 10; ++i) out.push_back(grid[last * static_cast<std::size_t>(i) / 10]);
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

SaddleConfig saddle_of(const RunConfig& cfg) {
  SaddleConfig s;
  s.quad_order = cfg.theory.quad_order;
  return s;
}

TheorySliceOptions theory_options(const RunConfig& cfg) {
  TheorySliceOptions o;
  o.lambda = cfg.theory.lambda;
  o.ell = cfg.theory.ell;
  o.form = cfg.theory.form;
  o.pairing = cfg.theory.pairing;
  o.saddle = saddle_of(cfg);
  return o;
}

}  // namespace

std::string to_string(ExperimentKind kind) {
  for (const auto& [k, v] : kExperiments)
    if (v == kind) return k;
  return "unknown";
}

ConfigError::ConfigError(Issues issues)
    : ValidationError(join_fields(issues), join_messages(issues)), issues_(std::move(issues)) {}

RunConfig parse_run_config(const json& j) {
  Issues issues;
  RunConfig cfg;
  json echo = json::object();
  if (!j.is_object()) throw ConfigError(Issues{{"config", "must be a JSON object"}});

  if (!j.contains("experiment")) {
    issues.emplace_back("experiment", "missing");
  } else if (!j["experiment"].is_string() || !kExperiments.count(j["experiment"].get<std::string>())) {
    issues.emplace_back("experiment", "must be one of figure1, overlaps_sweep, mse_sweep, gap_scaling, uturn, "
                                      "reduced_ode, theory_only");
  } else {
    cfg.experiment = kExperiments.at(j["experiment"].get<std::string>());
  }
  echo["experiment"] = to_string(cfg.experiment);

  Section mix(j, "mixture", issues, echo);
  mix.get<int>("d", cfg.mixture.d, [](const int& d) { return d >= 2; }, "must be at least 2");
  mix.get<double>("p", cfg.mixture.p, [](const double& p) { return p > 0.0 && p < 1.0; }, "must lie in (0,1)");
  mix.get<double>("sigma", cfg.mixture.sigma, positive, "must be positive");
  mix.get<std::string>("mu", cfg.mixture.mu, [](const std::string& s) { return s == "all_ones" || s == "random_signs"; },
                       "must be all_ones or random_signs");
  mix.get<std::uint64_t>("mu_seed", cfg.mixture.mu_seed);
  mix.reject_unknown();

  Section sch(j, "schedule", issues, echo);
  sch.get<std::string>("kind", cfg.schedule.kind);
  sch.get<double>("kappa", cfg.schedule.kappa, positive, "must be positive");
  sch.get<int>("grid_points", cfg.schedule.grid_points, [](const int& g) { return g >= 2; }, "must be at least 2");
  sch.get<std::vector<double>>("norms", cfg.schedule.norms);
  sch.reject_unknown();

  Section tr(j, "train", issues, echo);
  auto& tc = cfg.train.config;
  tr.get<int>("n", cfg.train.n, positive_int, "must be positive");
  tr.get_enum("labels", cfg.train.labels,
              std::map<std::string, LabelSampling>{{"iid", LabelSampling::iid}, {"stratified", LabelSampling::stratified}});
  tr.get<int>("epochs", tc.epochs, positive_int, "must be positive");
  tr.get<double>("step_size", tc.step_size, positive, "must be positive");
  tr.get<double>("final_step_size", tc.final_step_size,
                 [](const double& v) { return v >= 0.0 && std::isfinite(v); }, "must be non-negative");
  tr.get<double>("beta1", tc.beta1, [](const double& v) { return v >= 0.0 && v < 1.0; }, "must lie in [0,1)");
  tr.get<double>("beta2", tc.beta2, [](const double& v) { return v >= 0.0 && v < 1.0; }, "must lie in [0,1)");
  tr.get<double>("lambda", tc.lambda, [](const double& v) { return v >= 0.0 && std::isfinite(v); }, "must be >= 0");
  tr.get<double>("ell", tc.ell, [](const double& v) { return v >= 0.0 && std::isfinite(v); }, "must be >= 0");
  bool fixed = tc.noise.kind == NoisePolicy::Kind::fixed_k;
  tr.get_enum("noise_policy", fixed, std::map<std::string, bool>{{"fresh_per_epoch", false}, {"fixed_k", true}});
  int k = 1;
  tr.get<int>("k", k, positive_int, "must be positive");
  tc.noise = fixed ? NoisePolicy::fixed(k) : NoisePolicy::fresh();
  tr.reject_unknown();

  Section mc(j, "montecarlo", issues, echo);
  mc.get<int>("K", cfg.montecarlo.K, positive_int, "must be positive");
  mc.get<std::uint64_t>("seed", cfg.montecarlo.seed);
  mc.reject_unknown();
  tc.seed = derive_seed(cfg.montecarlo.seed, "train");

  Section th(j, "theory", issues, echo);
  cfg.theory.n = cfg.train.n;
  cfg.theory.lambda = tc.lambda / 2.0;
  cfg.theory.ell = tc.ell / 2.0;
  cfg.theory.pairing = fixed ? NoisePairing::paired : NoisePairing::fresh;
  th.get_count_or_inf("n", cfg.theory.n);
  th.get<double>("lambda", cfg.theory.lambda, [](const double& v) { return v >= 0.0; }, "must be >= 0");
  th.get<double>("ell", cfg.theory.ell, [](const double& v) { return v >= 0.0; }, "must be >= 0");
  th.get_enum("form", cfg.theory.form,
              std::map<std::string, SecondPhaseForm>{{"closed_form", SecondPhaseForm::closed_form},
                                                     {"stationary", SecondPhaseForm::stationary}});
  th.get_enum("pairing", cfg.theory.pairing,
              std::map<std::string, NoisePairing>{{"paired", NoisePairing::paired}, {"fresh", NoisePairing::fresh}});
  th.get<bool>("empirical_fraction", cfg.theory.empirical_fraction);
  th.get<int>("quad_order", cfg.theory.quad_order, [](const int& v) { return v >= 2 && v <= 4096; },
              "must lie in [2, 4096]");
  th.reject_unknown();

  Section sw(j, "sweep", issues, echo);
  auto& s = cfg.sweep;
  if (cfg.experiment == ExperimentKind::overlaps_sweep) s.times = default_sweep_times();
  sw.get<std::vector<double>>("times", s.times);
  sw.get<int>("seeds", s.seeds, positive_int, "must be positive");
  sw.get<int>("second_phase_epochs", s.second_phase_epochs, [](const int& v) { return v >= 0; }, "must be >= 0");
  sw.get<std::vector<int>>("n_list", s.n_list,
                           [](const std::vector<int>& v) {
                             if (v.empty()) return false;
                             for (int x : v)
                               if (x < 1) return false;
                             return true;
                           },
                           "must be a non-empty list of positive sizes");
  sw.get<int>("repeats", s.repeats, positive_int, "must be positive");
  sw.get<int>("test_draws", s.test_draws, positive_int, "must be positive");
  sw.get<std::vector<double>>("t0_list", s.t0_list);
  sw.get<std::vector<double>>("weights", s.weights);
  sw.get<std::vector<double>>("locations", s.locations);
  sw.get<double>("spread", s.spread, [](const double& v) { return v >= 0.0; }, "must be >= 0");
  sw.get<int>("steps", s.steps, [](const int& v) { return v >= 10; }, "must be at least 10");
  sw.reject_unknown();

  if (j.contains("budget")) {
    if (!j["budget"].is_number() || !(j["budget"].get<double>() > 0.0))
      issues.emplace_back("budget", "must be a positive number");
    else
      cfg.budget = j["budget"].get<double>();
  }
  echo["budget"] = cfg.budget;
  if (j.contains("output_dir")) {
    if (!j["output_dir"].is_string())
      issues.emplace_back("output_dir", "must be a string");
    else
      cfg.output_dir = j["output_dir"].get<std::string>();
  }
  const std::set<std::string> top = {"experiment", "mixture", "schedule", "train",     "montecarlo",
                                     "theory",     "sweep",   "budget",   "output_dir"};
  for (const auto& [key, v] : j.items())
    if (!top.count(key)) issues.emplace_back(key, "unknown field");

  // Owning-module checks, for what the per-field checks above do not cover.
  collect(issues, "mixture.", [&] { mixture_of(cfg); });
  collect(issues, "", [&] { schedule_of(cfg); });
  collect(issues, "", [&] { validate(cfg.train.config); });
  if (needs_two_mode(cfg.experiment) && cfg.schedule.kind != "two_mode_dilated")
    issues.emplace_back("schedule.kind", "this experiment needs two_mode_dilated");
  if (cfg.experiment == ExperimentKind::reduced_ode) {
    collect(issues, "sweep.", [&] { make_mixture_1d(s.weights, s.locations, s.spread); });
    if (cfg.schedule.kind == "two_mode_dilated")
      issues.emplace_back("schedule.kind", "reduced_ode needs identity or multi_mode");
  }
  if (cfg.experiment == ExperimentKind::figure1) {
    const double work = static_cast<double>(cfg.mixture.d) * cfg.train.n * cfg.schedule.grid_points * tc.epochs;
    if (work > cfg.budget) issues.emplace_back("budget", "d * n * grid_points * epochs exceeds the budget");
  }
  if (!issues.empty()) throw ConfigError(std::move(issues));

  cfg.resolved = echo;  // output_dir stays out: it does not affect results or the hash
  return cfg;
}

MixtureParams mixture_of(const RunConfig& cfg) {
  const MuChoice mu =
      cfg.mixture.mu == "random_signs" ? MuChoice::random_signs(cfg.mixture.mu_seed) : MuChoice::all_ones();
  return make_mixture(cfg.mixture.d, cfg.mixture.p, cfg.mixture.sigma, mu);
}

TimeSchedule schedule_of(const RunConfig& cfg) {
  json j;
  j["kind"] = cfg.schedule.kind;
  j["kappa"] = cfg.schedule.kappa;
  j["d"] = cfg.mixture.d;
  if (!cfg.schedule.norms.empty()) j["norms"] = cfg.schedule.norms;
  return schedule_from_json(j, cfg.mixture.d);
}

ExperimentReport run_experiment(const RunConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const auto params = mixture_of(cfg);
  const auto schedule = schedule_of(cfg);
  const auto grid = schedule.uniform_grid(cfg.schedule.grid_points);
  const std::uint64_t seed = cfg.montecarlo.seed;
  const TrainConfig& tc = cfg.train.config;

  ExperimentReport r;
  r.name = to_string(cfg.experiment);
  r.config = cfg.resolved;
  r.config_hash = config_hash(cfg.resolved);
  r.seeds["master"] = seed;

  auto train_data = [&] {
    const auto data_seed = derive_seed(seed, "dataset");
    r.seeds["dataset"] = data_seed;
    return sample_dataset(params, cfg.train.n, data_seed, {cfg.train.labels, true});
  };

  switch (cfg.experiment) {
    case ExperimentKind::figure1: {
      FigureOneConfig f;
      f.d = cfg.mixture.d;
      f.n = cfg.train.n;
      f.p = cfg.mixture.p;
      f.sigma = cfg.mixture.sigma;
      f.kappa = cfg.schedule.kappa;
      f.grid_points = cfg.schedule.grid_points;
      f.K = cfg.montecarlo.K;
      f.labels = cfg.train.labels;
      f.train = tc;
      f.seed = seed;
      f.budget = cfg.budget;
      auto res = figure1_run(f);
      res.report.config = r.config;
      res.report.config_hash = r.config_hash;
      r = std::move(res.report);
      break;
    }
    case ExperimentKind::overlaps_sweep: {
      OverlapSweepConfig o;
      o.d = cfg.mixture.d;
      o.n = cfg.train.n;
      o.p = cfg.mixture.p;
      o.sigma = cfg.mixture.sigma;
      o.kappa = cfg.schedule.kappa;
      o.times = cfg.sweep.times;
      o.seeds = cfg.sweep.seeds;
      o.labels = cfg.train.labels;
      o.train = tc;
      o.second_phase_epochs = cfg.sweep.second_phase_epochs;
      o.lambda = cfg.theory.lambda;
      o.ell = cfg.theory.ell;
      o.form = cfg.theory.form;
      o.pairing = cfg.theory.pairing;
      o.empirical_fraction = cfg.theory.empirical_fraction;
      o.saddle = saddle_of(cfg);
      o.seed = seed;
      const auto res = overlap_sweep(o);
      r.metrics["max_abs_m"] = res.max_abs_m;
      r.metrics["max_abs_omega"] = res.max_abs_omega;
      r.metrics["max_abs_c"] = res.max_abs_c;
      r.metrics["max_abs_b"] = res.max_abs_b;
      r.metrics["max_abs_q"] = res.max_abs_q;
      r.metrics["max_abs"] = res.max_abs();
      r.curves.push_back({"overlaps", res.table()});
      break;
    }
    case ExperimentKind::mse_sweep: {
      const auto data = train_data();
      const auto learned = train_all(data, schedule, grid, tc);
      const auto emp = mse_empirical(learned, data, params, schedule, cfg.sweep.test_draws, derive_seed(seed, "mse"));
      const auto theory = theory_curve(schedule, grid, cfg.theory.n, cfg.mixture.p, cfg.mixture.sigma,
                                       cfg.theory.lambda, cfg.theory.ell, cfg.theory.form, cfg.theory.pairing,
                                       saddle_of(cfg));
      Series table{{"t", emp.t}, {"mse_train", emp.train}, {"mse_test", emp.test}};
      for (const auto& col : theory)
        if (col.name == "mse_train" || col.name == "mse_test") table.push_back({"theory_" + col.name, col.values});
      r.curves.push_back({"mse", table});
      break;
    }
    case ExperimentKind::gap_scaling: {
      GapScalingConfig g;
      g.d = cfg.mixture.d;
      g.p = cfg.mixture.p;
      g.sigma = cfg.mixture.sigma;
      g.kappa = cfg.schedule.kappa;
      g.grid_points = cfg.schedule.grid_points;
      g.n_list = cfg.sweep.n_list;
      g.repeats = cfg.sweep.repeats;
      g.K = cfg.montecarlo.K;
      g.theory = theory_options(cfg);
      g.seed = seed;
      const auto res = gap_scaling(g);
      r.metrics["span_slope"] = res.span_slope;
      r.curves.push_back({"gaps", res.table()});
      break;
    }
    case ExperimentKind::uturn: {
      const auto data = train_data();
      const auto learned = train_all(data, schedule, grid, tc);
      const auto t0 = cfg.sweep.t0_list.empty() ? default_t0_list(grid) : cfg.sweep.t0_list;
      const auto u = uturn_curve(learned, params, schedule, t0, cfg.montecarlo.K, derive_seed(seed, "uturn"));
      r.metrics["p_hat"] = u.p_hat;
      r.metrics["plus_trials"] = u.plus_trials;
      r.metrics["minus_trials"] = u.minus_trials;
      r.metrics["label"] = "U-Turn (ODE analog)";
      r.curves.push_back(
          {"retention", {{"t0", u.t0}, {"pooled", u.pooled}, {"plus", u.plus}, {"minus", u.minus}}});
      break;
    }
    case ExperimentKind::reduced_ode: {
      const auto mix = make_mixture_1d(cfg.sweep.weights, cfg.sweep.locations, cfg.sweep.spread);
      const auto ens = integrate_reduced(mix, schedule, cfg.montecarlo.K, cfg.sweep.steps, derive_seed(seed, "reduced"));
      std::vector<double> idx;
      for (std::size_t i = 0; i < mix.weights.size(); ++i) idx.push_back(static_cast<double>(i));
      double worst = 0.0;
      for (std::size_t i = 0; i < mix.weights.size(); ++i)
        worst = std::max(worst, std::abs(ens.mode_fractions[i] - mix.weights[i]));
      r.metrics["max_abs_weight_error"] = worst;
      r.metrics["mode_fractions"] = ens.mode_fractions;
      r.curves.push_back({"modes",
                          {{"mode", idx}, {"location", mix.locations}, {"weight", mix.weights},
                           {"fraction", ens.mode_fractions}}});
      break;
    }
    case ExperimentKind::theory_only: {
      const auto& times = cfg.sweep.times.empty() ? grid : cfg.sweep.times;
      r.curves.push_back({"theory", theory_curve(schedule, times, cfg.theory.n, cfg.mixture.p, cfg.mixture.sigma,
                                                 cfg.theory.lambda, cfg.theory.ell, cfg.theory.form,
                                                 cfg.theory.pairing, saddle_of(cfg))});
      break;
    }
  }
  r.wall_seconds = seconds_since(start);
  return r;
}

std::string hash_hex(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

void write_run_directory(const ExperimentReport& report, const json& echo, const std::string& dir) {
  for (const auto& [stem, series] : report.curves) write_file_atomic(dir + "/" + stem + ".csv", format_csv(series));
  write_file_atomic(dir + "/config.json", echo.dump(2) + "\n");
  write_file_atomic(dir + "/report.json", report.to_json(true).dump(2) + "\n");
}

RunOutcome run(const std::string& config_path, const RunOverrides& overrides) {
  RunOutcome out;
  try {
    std::ifstream in(config_path);
    if (!in) throw ValidationError("config", "cannot read " + config_path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ValidationError("config", std::string("invalid JSON: ") + e.what());
    }
    if (j.is_object()) {
      if (overrides.output_dir) j["output_dir"] = *overrides.output_dir;
      if (overrides.seed) j["montecarlo"]["seed"] = *overrides.seed;
    }
    if (overrides.threads) {
      if (*overrides.threads < 1) throw ValidationError("threads", "must be positive");
      set_thread_count(*overrides.threads);
    }
    const auto cfg = parse_run_config(j);
    const auto report = run_experiment(cfg);
    out.run_dir = (std::filesystem::path(cfg.output_dir) / hash_hex(report.config_hash)).string();
    write_run_directory(report, cfg.resolved, out.run_dir);
    out.message = "wrote " + out.run_dir;
  } catch (const ValidationError& e) {
    out.exit_code = 1;
    out.message = std::string("validation error: ") + e.what();
  } catch (const NumericalError& e) {
    out.exit_code = 2;
    out.message = std::string("numerical failure: ") + e.what();
  } catch (const std::runtime_error& e) {
    // filesystem errors and failed atomic writes
    out.exit_code = 1;
    out.message = std::string("output error: ") + e.what();
  }
  return out;
}

}  // namespace gmflow
