#include <doctest.h>

#include <cmath>
#include <limits>

#include "gmflow/errors.hpp"
#include "gmflow/quadrature.hpp"
#include "gmflow/theory.hpp"
#include "oracles.hpp"

using namespace gmflow;
using doctest::Approx;

TEST_CASE("Gauss-Hermite rules") {
  const auto& r = gauss_hermite(32);
  CHECK(r.order() == 32);
  double w = 0.0;
  for (double x : r.weights) w += x;
  CHECK(w == Approx(1.0).epsilon(1e-14));
  CHECK(gaussian_expectation([](double z) { return z * z; }, 16) == Approx(1.0).epsilon(1e-13));
  CHECK(gaussian_expectation([](double z) { return z * z * z * z; }, 16) == Approx(3.0).epsilon(1e-13));
  CHECK(gaussian_expectation([](double z) { return std::cos(z); }, 64) == Approx(std::exp(-0.5)).epsilon(1e-13));
  const auto f = [](double z) { return std::tanh(3.0 * z + 0.5); };
  const int n = adequate_order(f, 16, 1024, 1e-10);
  CHECK(std::abs(gaussian_expectation(f, n) - oracle::gauss_mean(f, 20001)) < 1e-9);
}

TEST_CASE("mixture averages") {
  CHECK(gm_average([](const GmPoint& q) { return q.s; }, 0.8, 1.3, 0.2, 2.0, 64) == Approx(0.6));
  for (double p : {0.6, 0.8})
    for (double kt : {0.5, 1.0, 2.0}) {
      const double b = std::atanh(2 * p - 1);
      const double phi = gm_average([](const GmPoint& q) { return std::tanh(q.arg); }, p, kt, b, kt, 512);
      CHECK(phi == Approx(2 * p - 1).epsilon(1e-10));
      // large-n form of the bias equation: E[phi' s] E[phi^2] = E[phi phi'] E[phi s]
      const auto m = phi_moments(p, kt, b, kt, 512);
      CHECK(m.P1s * m.B == Approx(m.PP * m.A).epsilon(1e-8));
    }
  const double want = oracle::mix_mean([](double s, double z) { return std::tanh(0.3 + 1.5 * s + 0.7 * z) * s; }, 0.7);
  CHECK(gm_average([](const GmPoint& q) { return std::tanh(q.arg) * q.s; }, 0.7, 0.7, 0.3, 1.5 / 0.7, 64) ==
        Approx(want).epsilon(1e-12));
}

TEST_CASE("phi moments against brute force") {
  const double p = 0.7, om = 1.2, b = 0.4, kt = 1.5;
  const auto m = phi_moments(p, om, b, kt, 512);
  auto at = [&](double s, double z) { return std::tanh(b + kt * om * s + om * z); };
  CHECK(m.A == Approx(oracle::mix_mean([&](double s, double z) { return at(s, z) * s; }, p)).epsilon(1e-12));
  CHECK(m.B == Approx(oracle::mix_mean([&](double s, double z) { return at(s, z) * at(s, z); }, p)).epsilon(1e-12));
  CHECK(m.P1sz == Approx(oracle::mix_mean([&](double s, double z) { return (1 - at(s, z) * at(s, z)) * s * z; }, p))
                      .epsilon(1e-12));
}

TEST_CASE("free energy matches the brute-force form") {
  for (double kt : {0.5, 2.0}) {
    const double f = first_phase_free_energy(8, 0.8, 1.0, 0.05, 0.05, kt, 1.1, 0.6, 128);
    CHECK(f == Approx(oracle::free_energy(8, 0.8, 1.0, 0.05, 0.05, kt, 1.1, 0.6, 2001)).epsilon(1e-11));
  }
}

TEST_CASE("first phase: symmetric start") {
  const auto o = solve_first_phase(8, 0.5, 1.0, 0.1, 0.1, 0.0);
  CHECK(o.omega == Approx(0.0));
  CHECK(o.b == Approx(0.0));
  const auto mom = phi_moments(0.5, o.omega, o.b, 0.0, 64);
  CHECK(o.m == Approx(8 * mom.A / (0.1 + 8 * mom.B)));
}

TEST_CASE("first phase: saturated start for p != 1/2") {
  const auto o = solve_first_phase(8, 0.8, 1.0, 0.1, 0.1, 0.0);
  CHECK(o.saturated);
  CHECK(o.b > 0.0);
  CHECK(std::isinf(o.b));
  CHECK(o.m == Approx(8 * 0.6 / 8.1));
}

TEST_CASE("first phase: a heavy omega penalty leaves the omega = 0 boundary") {
  const double n = 2, p = 0.8, s = 1.0, lam = 0.3, ell = 5.0, kt = 0.2;
  const auto o = solve_first_phase(n, p, s, lam, ell, kt);
  CHECK(o.saturated);
  CHECK(o.omega == 0.0);
  CHECK(o.m == Approx(n * 0.6 / (lam + n)));
  const double edge = n * (s * s + n) * 0.36 / (2 * (lam + n));
  for (double om : {0.05, 0.2, 0.5, 1.0})
    for (double b : {-1.0, 0.0, 1.0, 3.0}) CHECK(oracle::free_energy(n, p, s, lam, ell, kt, om, b) < edge);
}

TEST_CASE("first phase: large n approaches the infinite-sample values") {
  const auto o = solve_first_phase(1e6, 0.8, 1.0, 0.1, 0.1, 2.0);
  CHECK(std::abs(o.b - 0.693147) < 1e-3);
  CHECK(std::abs(o.omega - 2.0) < 1e-3);
  CHECK(std::abs(o.m - 1.0) < 1e-3);
}

TEST_CASE("first phase: n=8 against a dense grid of the free energy") {
  const double n = 8, p = 0.8, s = 1.0, lam = 0.05, ell = 0.05, kt = 2.0;
  const auto o = solve_first_phase(n, p, s, lam, ell, kt);
  const int G = 400;
  const double om_hi = 4.0, b_lo = -3.0, b_hi = 3.0;
  const double dom = om_hi / (G - 1), db = (b_hi - b_lo) / (G - 1);
  double best = -INFINITY, bo = 0, bb = 0;
  for (int i = 0; i < G; ++i)
    for (int j = 0; j < G; ++j) {
      const double om = i * dom, b = b_lo + j * db;
      const double f = oracle::free_energy(n, p, s, lam, ell, kt, om, b);
      if (f > best) best = f, bo = om, bb = b;
    }
  CHECK(std::abs(o.omega - bo) <= dom);
  CHECK(std::abs(o.b - bb) <= db);
  CHECK(o.residuals.max() < 1e-6);
}

TEST_CASE("first phase: derived overlaps") {
  const double n = 16, sigma = 1.5;
  const auto o = solve_first_phase(n, 0.7, sigma, 0.05, 0.05, 1.0);
  const auto mom = phi_moments(0.7, o.omega, o.b, 1.0, 128);
  CHECK(o.m == Approx(n * mom.A / (0.05 + n * mom.B)).epsilon(1e-10));
  CHECK(o.q_eta == Approx(sigma * o.m / n));
  CHECK(o.q == Approx(o.m * o.m + n * o.q_eta * o.q_eta));
  CHECK(o.r == Approx(o.omega * o.omega));
  CHECK(o.c == 0.0);
  CHECK(o.p_eta == 0.0);
}

TEST_CASE("second phase values") {
  const auto o = solve_second_phase(8, 1.0, 0.1, 0.5);
  CHECK(o.c == Approx(0.443077).epsilon(1e-6));
  CHECK(o.m == Approx(0.768851).epsilon(1e-6));
  CHECK(o.q_xi == Approx(o.c * 0.5 / 8.1));
  CHECK(o.q_eta == Approx((1 - o.c * 0.5) / 8.1));
  CHECK(o.q == Approx(o.m * o.m + 8 * o.q_xi * o.q_xi + 8 * o.q_eta * o.q_eta));
  CHECK(solve_second_phase(8, 1.0, 0.1, 0.0).c == 0.0);

  const auto big = solve_second_phase(1e6, 2.0, 0.1, 0.5);
  CHECK(std::abs(big.c - 1.142857) < 1e-4);
  CHECK(std::abs(big.m - 0.428571) < 1e-4);

  // the stationary form tends to the exact-denoiser weight
  const auto st = solve_second_phase(1e6, 2.0, 0.1, 0.5, SecondPhaseForm::stationary);
  CHECK(std::abs(st.c - 0.5 * 4.0 / (0.25 + 4.0 * 0.25)) < 1e-4);
  CHECK(solve_second_phase(8, 1.0, 0.1, 0.5, SecondPhaseForm::stationary, NoisePairing::fresh).q_xi == 0.0);
  CHECK_THROWS_AS(solve_second_phase(8, 1.0, 0.1, 1.5), ValidationError);
}

TEST_CASE("infinite-sample overlaps") {
  CHECK(limit_overlaps(Phase::first, 0.5, 1.0, 1.0).b == Approx(0.0));
  const auto f = limit_overlaps(Phase::first, 0.8, 1.0, 2.0);
  CHECK(f.b == Approx(0.693147).epsilon(1e-6));
  CHECK(f.omega == Approx(2.0));
  CHECK(f.m == Approx(1.0));
  const auto s = limit_overlaps(Phase::second, 0.8, 1.0, 1.0);
  CHECK(s.c == Approx(1.0));
  CHECK(s.m == Approx(0.0));
}

TEST_CASE("measured overlaps") {
  const int d = 50, n = 6;
  const auto params = make_mixture(d, 0.7, 1.3, MuChoice::random_signs(2));
  const auto data = sample_dataset(params, n, 4);
  SliceParams th{0.0, 0.2, 0.1, params.mu, Vector::Zero(d)};
  auto o = measure_overlaps(th, data, params, Phase::first);
  CHECK(o.m == Approx(1.0));
  CHECK(o.q == Approx(1.0));
  CHECK(o.omega == 0.0);
  CHECK(o.r == 0.0);
  CHECK(o.p_eta == 0.0);

  // u, w random: compare against direct dot products with the sign convention
  th.u = sample_noise(d, 1, 9).row(0).transpose();
  th.w = sample_noise(d, 1, 10).row(0).transpose();
  o = measure_overlaps(th, data, params, Phase::second);
  double m = params.mu.dot(th.u) / d, om = params.mu.dot(th.w) / d;
  const double sgn = m < 0 ? -1.0 : 1.0;
  double qe = 0, pe = 0, qx = 0, px = 0;
  for (const auto& smp : data.samples) {
    qe += smp.s * smp.z.dot(th.u) / d;
    pe += smp.s * smp.z.dot(th.w) / d;
    qx += smp.s * smp.x0.dot(th.u) / d;
    px += smp.s * smp.x0.dot(th.w) / d;
  }
  CHECK(o.m == Approx(sgn * m));
  CHECK(o.omega == Approx(sgn * om));
  CHECK(o.q_eta == Approx(sgn * qe / n));
  CHECK(o.p_eta == Approx(sgn * pe / n));
  CHECK(o.q_xi == Approx(sgn * qx / n));
  CHECK(o.p_xi == Approx(sgn * px / n));
  CHECK(o.q == Approx(th.u.squaredNorm() / d));
  CHECK(o.r == Approx(th.w.squaredNorm() / d));
  CHECK(o.c == 0.2);

  // u along the signed noise direction
  th.u = signed_eta(data, params.sigma) / (params.sigma * n);
  o = measure_overlaps(th, data, params, Phase::second);
  double want = 0.0;
  for (const auto& a : data.samples)
    for (const auto& b : data.samples) want += a.s * b.s * a.z.dot(b.z);
  CHECK(std::abs(o.q_eta) == Approx(want / (n * n * double(d))));

  const auto bare = sample_dataset(params, n, 4, {.paired_noise = false});
  CHECK(std::isnan(measure_overlaps(th, bare, params, Phase::second).q_xi));
}

TEST_CASE("theory MSE values") {
  const double sigma = 1.0, p = 0.8;
  const auto t0 = limit_overlaps(Phase::first, p, sigma, 0.0);
  CHECK(mse_theory(t0, p, sigma, MseKind::test, SampleRegime::infinite) == Approx(1.64).epsilon(1e-9));
  const auto t1 = limit_overlaps(Phase::second, p, sigma, 0.0);
  CHECK(mse_theory(t1, p, sigma, MseKind::test, SampleRegime::infinite) == Approx(1.0));
  const auto t2 = limit_overlaps(Phase::second, p, sigma, 1.0);
  CHECK(mse_theory(t2, p, sigma, MseKind::test, SampleRegime::infinite) == Approx(0.0));
  const auto mid = limit_overlaps(Phase::second, p, 1.0, 0.5);
  CHECK(mid.c == Approx(0.5));
  CHECK(mse_theory(mid, p, 1.0, MseKind::test, SampleRegime::infinite) == Approx(0.625));
}

TEST_CASE("finite-n MSE tends to the infinite-sample value") {
  for (double tau : {0.2, 0.7}) {
    const auto big = solve_second_phase(1e7, 1.3, 0.1, tau);
    const auto lim = limit_overlaps(Phase::second, 0.8, 1.3, tau);
    CHECK(mse_theory(big, 0.8, 1.3, MseKind::test, SampleRegime::finite) ==
          Approx(mse_theory(lim, 0.8, 1.3, MseKind::test, SampleRegime::infinite)).epsilon(1e-5));
  }
  // train error below test error at small n
  const auto small = solve_second_phase(4, 1.0, 0.1, 0.5);
  CHECK(mse_theory(small, 0.8, 1.0, MseKind::train, SampleRegime::finite) <
        mse_theory(small, 0.8, 1.0, MseKind::test, SampleRegime::finite));
}

TEST_CASE("saddle config validation") {
  SaddleConfig c;
  CHECK_NOTHROW(validate(c));
  c.quad_order = 8;
  CHECK_THROWS_AS(validate(c), ValidationError);
  c = {};
  c.solver_tol = 0.0;
  CHECK_THROWS_AS(validate(c), ValidationError);
}
