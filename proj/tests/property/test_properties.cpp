#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "gmflow/dae.hpp"
#include "gmflow/experiments.hpp"
#include "gmflow/parallel.hpp"
#include "gmflow/rng.hpp"
#include "gmflow/theory.hpp"
#include "oracles.hpp"

using namespace gmflow;
using doctest::Approx;

// ---- mixture ----

TEST_CASE("stored sample fields reconstruct exactly") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto params = make_mixture(17, 0.3 + 0.02 * seed, 0.4 + 0.1 * seed, MuChoice::random_signs(seed));
    const auto data = sample_dataset(params, 9, seed);
    for (const auto& s : data.samples) {
      const Vector again = s.s * params.mu + params.sigma * s.z;
      CHECK((s.x1.array() == again.array()).all());
    }
  }
}

TEST_CASE("M sqrt(d) equals nu on any cloud") {
  for (int d : {7, 100, 1001}) {
    const auto params = make_mixture(d, 0.8, 1.0, MuChoice::random_signs(d));
    const auto st = projection_stats(params, sample_noise(d, 30, d), 0.0);
    for (std::size_t i = 0; i < st.M.size(); ++i) CHECK(st.M[i] * std::sqrt(double(d)) == Approx(st.nu[i]).epsilon(1e-14));
  }
}

TEST_CASE("orthogonal variance of scaled Gaussian clouds") {
  const int d = 500, K = 200;
  const auto params = make_mixture(d, 0.8, 1.0);
  for (double v : {0.25, 1.0, 4.0}) {
    const StateMatrix g = std::sqrt(v) * sample_noise(d, K, 31);
    const double est = projection_stats(params, g, 0.0).orth_variance;
    const double se = v * std::sqrt(2.0 / (double(K) * (d - 1)));
    CHECK(std::abs(est - v) < 3.0 * se);
  }
}

// ---- schedule ----

TEST_CASE("dilations are monotone, continuous and have consistent slopes") {
  std::vector<TimeSchedule> all{TimeSchedule::identity(), TimeSchedule::two_mode(4.0, 1000),
                                TimeSchedule::two_mode(1.0, 5000), TimeSchedule::multi_mode(2.0, {10, 100, 1000}),
                                TimeSchedule::multi_mode(0.5, {3, 3, 7})};
  for (const auto& s : all) {
    const auto knots = s.knots();
    // monotone
    double prev = -1.0;
    for (double t : s.uniform_grid(2001)) {
      const double tau = s.tau(t).tau;
      CHECK(tau > prev);
      prev = tau;
    }
    CHECK(s.tau(s.t_begin()).tau == 0.0);
    CHECK(s.tau(s.t_end()).tau == Approx(1.0).epsilon(1e-15));
    // continuous at knots
    for (double k : knots) {
      if (k <= s.t_begin() || k >= s.t_end()) continue;
      const double e = 1e-12;
      CHECK(std::abs(s.tau(k - e).tau - s.tau(k + e).tau) < 1e-10);
    }
    // finite differences away from knots
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> U(s.t_begin(), s.t_end());
    for (int i = 0; i < 200; ++i) {
      const double t = U(gen);
      const double h = 1e-6;
      bool near = false;
      for (double k : knots) near = near || std::abs(t - k) < 2 * h;
      if (near || t - h < s.t_begin() || t + h > s.t_end()) continue;
      const double fd = (s.tau(t + h).tau - s.tau(t - h).tau) / (2 * h);
      CHECK(std::abs(fd - s.tau(t).tau_dot) < 1e-8);
      const auto k = coeffs_at(s, t);
      CHECK(k.alpha + k.beta == Approx(1.0).epsilon(1e-15));
      CHECK(k.alpha_dot == -k.beta_dot);
    }
  }
}

// ---- exact flow ----

TEST_CASE("combined drift equals denoiser-built drift at a million points") {
  const int d = 3;
  const auto params = make_mixture(d, 0.7, 1.3, MuChoice::random_signs(1));
  const auto sched = TimeSchedule::identity();
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> T(0.0, 0.999);
  std::normal_distribution<double> N;
  double worst = 0.0;
  Vector x(d), v(d);
  for (int i = 0; i < 1000000; ++i) {
    const double t = T(gen);
    for (int k = 0; k < d; ++k) x[k] = 3.0 * N(gen);
    const auto c = coeffs_at(sched, t);
    exact_velocity(params, sched, t, x, v);
    const Vector b = velocity_from_denoiser(c, exact_denoiser(params, c, x), x);
    worst = std::max(worst, (v - b).norm() / std::max(1.0, b.norm()));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("integrator error falls by at least 8x when the step halves") {
  const VelocityField f = [](double t, ConstVecRef x, VecRef out) { out = -x * (1.0 + t); };
  const double exact = std::exp(-1.5);  // x' = -(1+t) x on [0,1]
  StateMatrix one(1, 1);
  one(0, 0) = 1.0;
  auto err = [&](int steps) {
    std::vector<double> grid;
    for (int i = 0; i <= steps; ++i) grid.push_back(double(i) / steps);
    return std::abs(integrate_states(f, one, grid).terminal()(0, 0) - exact);
  };
  for (int s : {5, 10, 20, 40}) CHECK(err(s) / err(2 * s) >= 8.0);
}

TEST_CASE("exact flow marginals at the phase boundary and the end") {
  const int d = 4000, K = 200;
  for (double sigma : {0.7, 1.0}) {
    const auto params = make_mixture(d, 0.8, sigma);
    const auto sched = TimeSchedule::two_mode(4.0, d);
    EnsembleOptions opt;
    opt.checkpoints = {1.0};
    const auto grid = sched.uniform_grid(101);
    const auto ens = integrate_ensemble(exact_field(params, sched), d, K, grid, 8, opt);
    // at finite d, tau(1) = kappa / sqrt(d) is not yet 0
    const auto k = coeffs_at(sched, 1.0);
    const double want = k.alpha * k.alpha + k.beta * k.beta * sigma * sigma;
    CHECK(std::abs(projection_stats(params, ens, 1.0).orth_variance - want) < 0.02 * want);
    CHECK(std::abs(projection_stats(params, ens, 2.0).orth_variance - sigma * sigma) < 0.03 * sigma * sigma);
  }
}

// ---- dae ----

TEST_CASE("analytic gradient agrees with central differences on 100 instances") {
  std::mt19937_64 gen(11);
  std::uniform_int_distribution<int> D(1, 10), B(1, 6);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto in = oracle::random_instance(gen, D(gen), B(gen));
    const double lam = 0.05 * (trial % 7), ell = 0.03 * (trial % 5);
    const auto fd = oracle::fd_gradient(in, lam, ell);
    SliceParams th{0.0, in.c, in.b, in.u, in.w};
    Batch b;
    const int d = static_cast<int>(in.u.size());
    b.xt.resize(static_cast<Eigen::Index>(in.xt.size()), d);
    b.x1.resize(static_cast<Eigen::Index>(in.xt.size()), d);
    for (std::size_t i = 0; i < in.xt.size(); ++i) {
      b.xt.row(static_cast<Eigen::Index>(i)) = in.xt[i].transpose();
      b.x1.row(static_cast<Eigen::Index>(i)) = in.x1[i].transpose();
    }
    const auto g = loss_gradient(th, b, lam, ell);
    std::vector<double> an{g.c, g.b};
    for (int k = 0; k < d; ++k) an.push_back(g.u[k]);
    for (int k = 0; k < d; ++k) an.push_back(g.w[k]);
    for (std::size_t i = 0; i < an.size(); ++i)
      worst = std::max(worst, std::abs(an[i] - fd[i]) / std::max(1.0, std::abs(fd[i])));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("trained loss never exceeds the initial loss") {
  const auto params = make_mixture(30, 0.8, 1.0);
  const auto data = sample_dataset(params, 12, 5);
  const auto sched = TimeSchedule::two_mode(2.0, 30);
  TrainConfig cfg;
  cfg.epochs = 300;
  cfg.noise = NoisePolicy::fixed(2);
  for (std::size_t i = 0; i < 10; ++i) {
    cfg.seed = slice_seed(3, i);
    const auto tr = train_slice_traced(data, sched, 0.2 * i, cfg);
    CHECK(tr.loss.back() <= tr.loss.front());
  }
}

TEST_CASE("training is equivariant to dataset order") {
  const auto params = make_mixture(20, 0.7, 1.0);
  auto data = sample_dataset(params, 10, 4);
  const auto sched = TimeSchedule::two_mode(2.0, 20);
  for (auto policy : {NoisePolicy::fresh(), NoisePolicy::fixed(3)}) {
    TrainConfig cfg;
    cfg.epochs = 120;
    cfg.seed = 9;
    cfg.noise = policy;
    const auto a = train_slice(data, sched, 0.7, cfg);
    auto shuffled = data;
    std::mt19937_64 gen(1);
    std::shuffle(shuffled.samples.begin(), shuffled.samples.end(), gen);
    const auto b = train_slice(shuffled, sched, 0.7, cfg);
    CHECK(a.u == b.u);
    CHECK(a.w == b.w);
    CHECK(a.c == b.c);
    CHECK(a.b == b.b);
  }
}

TEST_CASE("train_all does not depend on the worker count") {
  const auto params = make_mixture(16, 0.8, 1.0);
  const auto data = sample_dataset(params, 6, 2);
  const auto sched = TimeSchedule::two_mode(2.0, 16);
  TrainConfig cfg;
  cfg.epochs = 40;
  const auto grid = sched.uniform_grid(7);
  const int keep = thread_count();
  set_thread_count(1);
  const auto a = train_all(data, sched, grid, cfg);
  set_thread_count(4);
  const auto b = train_all(data, sched, grid, cfg);
  set_thread_count(keep);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    CHECK(a.slices[i].u == b.slices[i].u);
    CHECK(a.slices[i].w == b.slices[i].w);
  }
}

TEST_CASE("tied weights with zero bias give an odd denoiser") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const int d = 3 + int(seed);
    const Vector u = sample_noise(d, 1, seed).row(0).transpose();
    const SliceParams th{0.0, 0.1 * seed, 0.0, u, u};
    const Vector x = sample_noise(d, 1, 100 + seed).row(0).transpose();
    CHECK(dae_forward(th, -x) == -dae_forward(th, x));
  }
}

// ---- theory ----

TEST_CASE("first-phase solutions are stationary") {
  std::mt19937_64 gen(21);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int i = 0; i < 10; ++i) {
    const double n = 2 + 62 * U(gen), p = 0.55 + 0.4 * U(gen), s = 0.5 + 1.5 * U(gen);
    const double lam = 0.02 + 0.3 * U(gen), ell = 0.02 + 0.3 * U(gen), kt = 0.2 + 2.3 * U(gen);
    const auto o = solve_first_phase(n, p, s, lam, ell, kt);
    CAPTURE(n);
    CAPTURE(kt);
    CHECK(o.residuals.max() < 1e-6);
    CHECK(o.q == Approx(o.m * o.m + n * o.q_eta * o.q_eta));
  }
}

TEST_CASE("large-n solutions agree with the infinite-sample forms") {
  for (double p : {0.6, 0.8})
    for (double kt : {0.5, 1.0, 2.0}) {
      const auto o = solve_first_phase(1e6, p, 1.0, 0.1, 0.1, kt);
      const auto l = limit_overlaps(Phase::first, p, 1.0, kt);
      CHECK(std::abs(o.b - l.b) < 1e-3);
      CHECK(std::abs(o.omega - l.omega) < 1e-3);
      CHECK(std::abs(o.m - l.m) < 1e-3);
    }
  for (double sigma : {0.5, 1.0, 2.0})
    for (double tau = 0.0; tau <= 1.0; tau += 0.25) {
      const auto o = solve_second_phase(1e6, sigma, 0.1, tau);
      const auto l = limit_overlaps(Phase::second, 0.8, sigma, tau);
      CHECK(std::abs(o.c - l.c) < 1e-3);
      CHECK(std::abs(o.m - l.m) < 1e-3);
    }
}

TEST_CASE("doubling the quadrature order leaves the overlaps unchanged") {
  for (double kt : {0.5, 1.5}) {
    SaddleConfig a, b;
    a.quad_order = 64;
    b.quad_order = 128;
    const auto x = solve_first_phase(8, 0.8, 1.0, 0.05, 0.05, kt, a);
    const auto y = solve_first_phase(8, 0.8, 1.0, 0.05, 0.05, kt, b);
    CHECK(std::abs(x.m - y.m) < 1e-8);
    CHECK(std::abs(x.omega - y.omega) < 1e-8);
    CHECK(std::abs(x.b - y.b) < 1e-8);
  }
}

TEST_CASE("first-phase infinite-sample MSE is continuous and approaches sigma^2") {
  const double p = 0.8, sigma = 1.0;
  auto mse = [&](double kappa, double t) {
    return mse_theory(limit_overlaps(Phase::first, p, sigma, kappa * t), p, sigma, MseKind::test,
                      SampleRegime::infinite);
  };
  for (double kappa : {2.0, 4.0}) {
    double coarse = 0.0, fine = 0.0;
    for (int i = 1; i < 50; ++i) coarse = std::max(coarse, std::abs(mse(kappa, i / 50.0) - mse(kappa, (i + 1) / 50.0)));
    for (int i = 1; i < 200; ++i) fine = std::max(fine, std::abs(mse(kappa, i / 200.0) - mse(kappa, (i + 1) / 200.0)));
    CHECK(fine < coarse / 2.0);
  }
  // excess over sigma^2 at t = 1 decays faster than any fixed power
  const double e2 = mse(2.0, 1.0) - 1.0, e4 = mse(4.0, 1.0) - 1.0, e6 = mse(6.0, 1.0) - 1.0;
  CHECK(e2 > e4);
  CHECK(e4 > e6);
  CHECK(e6 / e4 < e4 / e2);
}

// ---- experiments ----

TEST_CASE("mode-weight estimator is binomially calibrated") {
  const int d = 50, K = 400;
  const double p = 0.8;
  const auto params = make_mixture(d, p, 1.0);
  int inside = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto data = sample_dataset(params, K, seed, {.paired_noise = false});
    StateMatrix s(K, d);
    for (int i = 0; i < K; ++i) s.row(i) = data.samples[i].x1.transpose();
    const double band = 3.0 * std::sqrt(p * (1 - p) / K);
    inside += std::abs(estimate_p(s, params) - p) <= band;
  }
  CHECK(inside >= 95);
}

TEST_CASE("a larger dilation does not hurt the exact-flow estimate") {
  const int d = 1000, K = 1000;
  const auto params = make_mixture(d, 0.8, 1.0);
  double err[2];
  int i = 0;
  for (double kappa : {4.0, 8.0}) {
    const auto sched = TimeSchedule::two_mode(kappa, d);
    const auto ens = integrate_ensemble(exact_field(params, sched), d, K, sched.uniform_grid(100), 12);
    err[i++] = std::abs(estimate_p(ens, params) - 0.8);
  }
  CHECK(err[1] <= err[0] + 0.03);
}
