#include <doctest.h>

#include <cmath>

#include "gmflow/errors.hpp"
#include "gmflow/experiments.hpp"
#include "gmflow/rng.hpp"

using namespace gmflow;
using doctest::Approx;

namespace {

StateMatrix rows_of(const Vector& v, int K) {
  StateMatrix out(K, v.size());
  for (int i = 0; i < K; ++i) out.row(i) = v.transpose();
  return out;
}

const std::vector<double>& column(const Series& s, const std::string& name) {
  for (const auto& c : s)
    if (c.name == name) return std::get<std::vector<double>>(c.values);
  throw std::runtime_error("no column " + name);
}

}  // namespace

TEST_CASE("estimate_p on fixed states") {
  const auto params = make_mixture(30, 0.8, 1.0);
  CHECK(estimate_p(rows_of(params.mu, 10), params) == 1.0);
  CHECK(estimate_p(rows_of(-params.mu, 10), params) == 0.0);
  CHECK(estimate_p(StateMatrix::Zero(4, 30), params) == 1.0);
  CHECK_THROWS_AS(estimate_p(StateMatrix(0, 30), params), ValidationError);
}

TEST_CASE("estimate_sigma on fixed states") {
  const int d = 200, K = 600;
  const auto params = make_mixture(d, 0.8, 1.5);
  StateMatrix s(K, d);
  const auto g = sample_noise(d, K, 3);
  for (int i = 0; i < K; ++i) {
    const double sign = i % 5 == 0 ? -1.0 : 1.0;
    Vector gi = g.row(i).transpose();
    gi -= (gi.dot(params.mu) / d) * params.mu;
    s.row(i) = (sign * params.mu + 1.5 * gi).transpose();
  }
  CHECK(std::abs(estimate_sigma(s, params) - 1.5) < 0.02 * 1.5);
  CHECK(estimate_sigma(rows_of(params.mu, 5), params) == Approx(0.0).epsilon(1e-12));
}

TEST_CASE("report json and config hash") {
  ExperimentReport r;
  r.name = "demo";
  r.config = {{"b", 2}, {"a", 1}};
  r.config_hash = config_hash(r.config);
  r.metrics["x"] = 0.5;
  r.curves.push_back({"curve", Series{{"t", std::vector<double>{0.0}}}});
  r.wall_seconds = 1.25;
  const auto j = r.to_json();
  CHECK(j["name"] == "demo");
  CHECK(j["metrics"]["x"] == 0.5);
  CHECK(j.contains("wall_seconds"));
  CHECK(!r.to_json(false).contains("wall_seconds"));
  CHECK(config_hash(nlohmann::json{{"a", 1}, {"b", 2}}) == r.config_hash);
  CHECK(config_hash(nlohmann::json{{"a", 1}, {"b", 3}}) != r.config_hash);
}

TEST_CASE("log-log slope") {
  CHECK(loglog_slope({1, 2, 4, 8}, {3, 1.5, 0.75, 0.375}) == Approx(-1.0));
  CHECK(loglog_slope({1, 10}, {2, 200}) == Approx(2.0));
}

TEST_CASE("exact slices give a zero gap and gaps are deterministic") {
  const int d = 120;
  const auto params = make_mixture(d, 0.8, 1.0);
  const auto data = sample_dataset(params, 6, 2);
  const auto sched = TimeSchedule::two_mode(3.0, d);
  const auto grid = sched.uniform_grid(30);
  const auto exact = exact_slices(params, sched, grid);
  const auto g = exact_vs_learned_gap(params, data, sched, exact, 20, 5);
  CHECK(g.mu < 1e-6);
  CHECK(g.eta < 1e-6);
  CHECK(g.xi < 1e-6);
  REQUIRE(g.complement.size() == 5);
  for (double c : g.complement) CHECK(c < 1e-6);

  const auto th = theory_slices(params, data, sched, grid);
  const auto a = exact_vs_learned_gap(params, data, sched, th, 20, 5);
  const auto b = exact_vs_learned_gap(params, data, sched, th, 20, 5);
  CHECK(a.mu == b.mu);
  CHECK(a.eta_signed == b.eta_signed);
  CHECK(a.complement == b.complement);
  CHECK(a.span() > 0.0);

  const auto bare = sample_dataset(params, 6, 2, {.paired_noise = false});
  CHECK_THROWS_AS(exact_vs_learned_gap(params, bare, sched, exact, 4, 1), ValidationError);
}

TEST_CASE("theory slices approach the exact ones as n grows") {
  const int d = 100;
  const auto params = make_mixture(d, 0.8, 1.0);
  const auto sched = TimeSchedule::two_mode(2.0, d);
  const std::vector<double> grid{0.5, 1.5};
  const auto exact = exact_slices(params, sched, grid);
  double prev = INFINITY;
  for (int n : {4, 64, 1024}) {
    const auto data = sample_dataset(params, n, 1);
    const auto th = theory_slices(params, data, sched, grid);
    const double gap = std::abs(th.slices[1].c - exact.slices[1].c);
    CHECK(gap < prev);
    prev = gap;
  }
}

TEST_CASE("predicted overlaps switch phase at t=1") {
  const auto sched = TimeSchedule::two_mode(4.0, 1000);
  const auto a = predict_overlaps(sched, 0.5, 8, 0.8, 1.0, 0.05, 0.05, SecondPhaseForm::stationary, NoisePairing::fresh);
  CHECK(a.phase == Phase::first);
  CHECK(a.kt == Approx(2.0));
  const auto b = predict_overlaps(sched, 1.5, 8, 0.8, 1.0, 0.05, 0.05, SecondPhaseForm::stationary, NoisePairing::fresh);
  CHECK(b.phase == Phase::second);
  CHECK(b.tau == Approx(coeffs_at(sched, 1.5).beta));
  const auto inf = predict_overlaps(sched, 0.5, INFINITY, 0.8, 1.0, 0.05, 0.05, SecondPhaseForm::stationary,
                                    NoisePairing::fresh);
  CHECK(inf.omega == Approx(2.0));
  CHECK_THROWS_AS(predict_overlaps(TimeSchedule::identity(), 0.5, 8, 0.8, 1.0, 0.05, 0.05,
                                   SecondPhaseForm::stationary, NoisePairing::fresh),
                  ValidationError);
}

TEST_CASE("theory curve columns") {
  const auto sched = TimeSchedule::two_mode(4.0, 1000);
  const auto s = theory_curve(sched, {0.5, 1.5, 2.0}, INFINITY, 0.8, 1.0, 0.05, 0.05, SecondPhaseForm::closed_form,
                              NoisePairing::fresh);
  const std::vector<std::string> names{"t", "phase", "m", "omega", "c", "b", "q", "mse_train", "mse_test"};
  REQUIRE(s.size() == names.size());
  for (std::size_t i = 0; i < names.size(); ++i) CHECK(s[i].name == names[i]);
  CHECK(column(s, "b")[0] == Approx(std::atanh(0.6)));
  CHECK(column(s, "mse_test")[2] == Approx(0.0).epsilon(1e-12));
}

TEST_CASE("MSE of the exact match on point masses is zero at the end") {
  const int d = 10;
  const auto params = make_mixture(d, 0.7, 0.0, MuChoice::all_ones(), {.allow_zero_sigma = true});
  const auto data = sample_dataset(params, 5, 1);
  const auto sched = TimeSchedule::two_mode(2.0, d);
  // at tau = 1 the exact match is the identity for any sigma > 0
  const auto exact = exact_slices(make_mixture(d, 0.7, 1.0), sched, {2.0});
  const auto m = mse_empirical(exact, data, params, sched, 50, 3);
  CHECK(m.train[0] == Approx(0.0).epsilon(1e-24));
  CHECK(m.test[0] == Approx(0.0).epsilon(1e-24));
}

TEST_CASE("U-turn retention is 1 at the terminal time") {
  const int d = 60;
  const auto params = make_mixture(d, 0.8, 1.0);
  const auto sched = TimeSchedule::two_mode(3.0, d);
  const auto grid = sched.uniform_grid(20);
  const auto exact = exact_slices(params, sched, grid);
  const auto u = uturn_curve(exact, params, sched, {0.0, 1.0, 2.0}, 200, 4);
  REQUIRE(u.pooled.size() == 3);
  CHECK(u.pooled[2] == 1.0);
  CHECK(u.plus[2] == 1.0);
  CHECK(u.minus[2] == 1.0);
  CHECK(u.plus_trials + u.minus_trials == 200);
  CHECK(u.pooled[0] < u.pooled[2]);
  CHECK_THROWS_AS(uturn_curve(exact, params, sched, {2.5}, 10, 1), ValidationError);
}

TEST_CASE("figure1 budget guard") {
  FigureOneConfig f;
  f.budget = 1e6;
  CHECK_THROWS_AS(figure1_run(f), ValidationError);
  // d = 5000, K = 2000 fits under the default budget
  FigureOneConfig large;
  large.d = 5000;
  large.K = 2000;
  CHECK(double(large.d) * large.n * large.grid_points * large.train.epochs <= large.budget);
}

TEST_CASE("positive fraction curve") {
  const auto params = make_mixture(40, 0.8, 1.0);
  const auto sched = TimeSchedule::two_mode(2.0, 40);
  EnsembleOptions opt;
  opt.mu = params.mu;
  const auto ens = integrate_ensemble(exact_field(params, sched), 40, 100, sched.uniform_grid(10), 3, opt);
  const auto curve = positive_fraction_curve(ens);
  REQUIRE(curve.size() == 10);
  CHECK(curve.back() == Approx(estimate_p(ens, params)));
  const auto bare = integrate_ensemble(exact_field(params, sched), 40, 10, sched.uniform_grid(10), 3);
  CHECK_THROWS_AS(positive_fraction_curve(bare), ValidationError);
}
