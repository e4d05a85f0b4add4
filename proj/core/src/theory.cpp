#include "gmflow/theory.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "gmflow/errors.hpp"
#include "gmflow/quadrature.hpp"

namespace gmflow {
namespace {

double rel_residual(double lhs, double rhs) {
  return std::abs(lhs - rhs) / std::max({1.0, std::abs(lhs), std::abs(rhs)});
}

void check_p(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("mixture.p", "must lie in (0, 1)");
}

void check_common(double n, double sigma, double lambda) {
  if (!(n >= 1.0)) throw ValidationError("n", "must be at least 1");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ValidationError("mixture.sigma", "must be positive");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("train.lambda", "must be non-negative");
}

// E[phi s] and E[phi^2] only; used by the grid scan.
std::pair<double, double> ab_moments(double p, double omega, double b, double kt, const GaussHermiteRule& rule) {
  double A = 0.0, B = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    const double z = rule.nodes[i], w = rule.weights[i];
    const double base = b + omega * z;
    const double fp = std::tanh(base + kt * omega);
    const double fm = std::tanh(base - kt * omega);
    A += w * (p * fp - (1.0 - p) * fm);
    B += w * (p * fp * fp + (1.0 - p) * fm * fm);
  }
  return {A, B};
}

struct FirstPhaseProblem {
  double n, p, sigma, lambda, ell, kt;

  double L() const { return lambda / n; }
  double pen() const { return ell / (sigma * sigma + n); }

  // Free energy scaled by 2 / (s^2 + n): n A^2 / (lambda + n B) - ell omega^2 / (s^2 + n).
  double value(double omega, double b, const GaussHermiteRule& rule) const {
    const auto [A, B] = ab_moments(p, omega, b, kt, rule);
    return A * A / (L() + B) - pen() * omega * omega;
  }

  std::array<double, 2> gradient(double omega, double b, int order) const {
    const auto M = phi_moments(p, omega, b, kt, order);
    const double den = L() + M.B;
    const double g_w = 2.0 * M.A * M.P1x / den - 2.0 * M.A * M.A * M.PPx / (den * den) - 2.0 * pen() * omega;
    const double g_b = 2.0 * M.A * M.P1s / den - 2.0 * M.A * M.A * M.PP / (den * den);
    return {g_w, g_b};
  }
};

struct NewtonResult {
  double omega, b;
};

NewtonResult newton_maximize(const FirstPhaseProblem& prob, double omega, double b, int order, int max_iter) {
  const auto& rule = gauss_hermite(order);
  double g0 = prob.value(omega, b, rule);
  for (int it = 0; it < max_iter; ++it) {
    const auto g = prob.gradient(omega, b, order);
    const double gnorm = std::max(std::abs(g[0]), std::abs(g[1]));
    if (gnorm < 1e-14) break;

    const double h = 1e-5;
    const auto gwp = prob.gradient(omega + h, b, order), gwm = prob.gradient(omega - h, b, order);
    const auto gbp = prob.gradient(omega, b + h, order), gbm = prob.gradient(omega, b - h, order);
    const double hww = (gwp[0] - gwm[0]) / (2 * h);
    const double hbb = (gbp[1] - gbm[1]) / (2 * h);
    const double hwb = 0.5 * ((gwp[1] - gwm[1]) + (gbp[0] - gbm[0])) / (2 * h);
    const double det = hww * hbb - hwb * hwb;

    double dw, db;
    const bool newton = hww < 0.0 && det > 0.0;
    if (newton) {
      dw = -(hbb * g[0] - hwb * g[1]) / det;
      db = -(-hwb * g[0] + hww * g[1]) / det;
    } else {
      const double scale = 0.5 / std::max(1.0, std::max(std::abs(hww), std::abs(hbb)));
      dw = scale * g[0];
      db = scale * g[1];
    }

    double step = 1.0;
    double nw = omega, nb = b, g1 = g0;
    for (int ls = 0; ls < 60; ++ls) {
      nw = omega + step * dw;
      nb = b + step * db;
      if (nw < 0.0) {
        nw = -nw;
        nb = -nb;
      }
      g1 = prob.value(nw, nb, rule);
      if (g1 >= g0 - 1e-15 * std::max(1.0, std::abs(g0))) break;
      step *= 0.5;
    }
    const double moved = std::max(std::abs(nw - omega), std::abs(nb - b));
    omega = nw;
    b = nb;
    g0 = std::max(g0, g1);
    if (moved < 1e-14 * (1.0 + std::abs(omega) + std::abs(b))) break;
  }
  return {omega, b};
}

double moment_disagreement(double p, double omega, double b, double kt, int order) {
  const auto a = phi_moments(p, omega, b, kt, order);
  const auto c = phi_moments(p, omega, b, kt, 2 * order);
  return std::max({std::abs(a.A - c.A), std::abs(a.B - c.B), std::abs(a.P1s - c.P1s), std::abs(a.P1x - c.P1x),
                   std::abs(a.PP - c.PP), std::abs(a.PPx - c.PPx)});
}

void fill_first_phase(OverlapSet& o, double n, double sigma, double lambda, double ell, double kt, double p,
                      int order) {
  const auto M = phi_moments(p, o.omega, o.b, kt, order);
  const double s2 = sigma * sigma;
  const double den = lambda + n * M.B;
  o.m = n * M.A / den;
  o.q_eta = sigma * o.m / n;
  o.q = o.m * o.m + n * o.q_eta * o.q_eta;
  o.r = o.omega * o.omega;
  o.c = 0.0;
  o.q_xi = 0.0;
  o.p_eta = 0.0;
  o.p_xi = 0.0;

  o.rhat = -n * (s2 + n) * M.A * (den * M.P2s - n * M.A * M.dPP) / (den * den);
  o.residuals.b_eq = rel_residual(den * M.P1s, n * M.A * M.PP);
  // Stein: E[phi' s Z] = omega E[phi'' s], E[phi phi' Z] = omega E[(phi phi')'].
  o.residuals.rhat_eq = rel_residual(o.omega * o.rhat * den * den,
                                     -n * (s2 + n) * M.A * (den * M.P1sz - n * M.A * M.PPz));
  o.residuals.omega_eq = rel_residual(o.omega * (ell + o.rhat) * den * den,
                                      n * kt * (s2 + n) * (den * M.P1 * M.A - n * M.A * M.A * M.PPs));
}

}  // namespace

std::string to_string(Phase phase) { return phase == Phase::first ? "first" : "second"; }

double Residuals::max() const { return std::max({b_eq, rhat_eq, omega_eq}); }

void validate(const SaddleConfig& cfg) {
  if (cfg.quad_order < 16) throw ValidationError("saddle.quad_order", "must be at least 16");
  if (!(cfg.solver_tol > 0.0)) throw ValidationError("saddle.solver_tol", "must be positive");
  if (cfg.max_iter < 1) throw ValidationError("saddle.max_iter", "must be positive");
  if (!(cfg.b_max > 0.0)) throw ValidationError("saddle.b_max", "must be positive");
  if (cfg.scan_cells < 4) throw ValidationError("saddle.scan_cells", "must be at least 4");
  if (cfg.max_quad_order < cfg.quad_order) throw ValidationError("saddle.max_quad_order", "below quad_order");
}

double gm_average(const std::function<double(const GmPoint&)>& g, double p, double omega, double b, double kt,
                  int order, double tol) {
  auto eval = [&](int n) {
    const auto& rule = gauss_hermite(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
      const double z = rule.nodes[i];
      const double plus = g({1.0, z, b + kt * omega + omega * z});
      const double minus = g({-1.0, z, b - kt * omega + omega * z});
      acc += rule.weights[i] * (p * plus + (1.0 - p) * minus);
    }
    return acc;
  };
  const double value = eval(order);
  if (tol > 0.0) {
    const double check = eval(2 * order);
    if (std::abs(check - value) > tol)
      throw NumericalError("quadrature order " + std::to_string(order) + " too low: order-2N result differs by " +
                           std::to_string(std::abs(check - value)));
  }
  return value;
}

PhiMoments phi_moments(double p, double omega, double b, double kt, int order) {
  const auto& rule = gauss_hermite(order);
  PhiMoments M;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    const double z = rule.nodes[i];
    for (int k = 0; k < 2; ++k) {
      const double s = k == 0 ? 1.0 : -1.0;
      const double w = rule.weights[i] * (k == 0 ? p : 1.0 - p);
      const double f = std::tanh(b + kt * omega * s + omega * z);
      const double f1 = 1.0 - f * f;
      const double f2 = -2.0 * f * f1;
      const double x = kt * s + z;
      M.A += w * f * s;
      M.B += w * f * f;
      M.P1 += w * f1;
      M.P1s += w * f1 * s;
      M.P1x += w * f1 * s * x;
      M.P1sz += w * f1 * s * z;
      M.P2s += w * f2 * s;
      M.PP += w * f * f1;
      M.PPs += w * f * f1 * s;
      M.PPx += w * f * f1 * x;
      M.PPz += w * f * f1 * z;
      M.dPP += w * (f1 * f1 - 2.0 * f * f * f1);
    }
  }
  return M;
}

double first_phase_free_energy(double n, double p, double sigma, double lambda, double ell, double kt, double omega,
                               double b, int order) {
  const auto [A, B] = ab_moments(p, omega, b, kt, gauss_hermite(order));
  return n * (sigma * sigma + n) * A * A / (2.0 * (lambda + n * B)) - 0.5 * ell * omega * omega;
}

OverlapSet solve_first_phase(double n, double p, double sigma, double lambda, double ell, double kt,
                             const SaddleConfig& cfg) {
  validate(cfg);
  check_p(p);
  check_common(n, sigma, lambda);
  if (!(ell >= 0.0) || !std::isfinite(ell)) throw ValidationError("train.ell", "must be non-negative");
  if (!(kt >= 0.0) || !std::isfinite(kt)) throw ValidationError("kt", "must be non-negative");

  OverlapSet o;
  o.phase = Phase::first;
  o.kt = kt;
  o.n = n;

  // Boundary solution at omega = 0: phi = tanh b cannot depend on s, and the
  // free energy only grows with |tanh b|.
  auto boundary = [&] {
    o.omega = 0.0;
    o.quad_order = cfg.quad_order;
    const double tilt = 2.0 * p - 1.0;
    if (tilt == 0.0) {
      o.b = 0.0;
    } else {
      o.saturated = true;
      o.b = std::copysign(std::numeric_limits<double>::infinity(), tilt);
    }
    const double phi = tilt == 0.0 ? 0.0 : std::copysign(1.0, tilt);
    const double A = phi * tilt, B = phi * phi;
    o.m = n * A / (lambda + n * B);
    o.q_eta = sigma * o.m / n;
    o.q = o.m * o.m + n * o.q_eta * o.q_eta;
    o.r = 0.0;
    o.c = o.q_xi = o.p_eta = o.p_xi = 0.0;
    o.rhat = 0.0;
    return o;
  };
  if (kt == 0.0) return boundary();

  const FirstPhaseProblem prob{n, p, sigma, lambda, ell, kt};
  double wmax = cfg.omega_max > 0.0 ? cfg.omega_max : std::max(2.0, 1.5 * kt + 1.0);
  double bmax = cfg.b_max;
  const int cells = cfg.scan_cells;
  int order = cfg.quad_order;

  double best_w = 0.0, best_b = 0.0;
  for (int attempt = 0;; ++attempt) {
    // The scan needs an order that resolves the flattest part of the box.
    while (order < cfg.max_quad_order && moment_disagreement(p, wmax, 0.0, kt, order) > 1e-12) order *= 2;
    const auto& rule = gauss_hermite(order);
    double best = -std::numeric_limits<double>::infinity();
    int bi = 0, bj = 0;
    for (int i = 0; i <= cells; ++i) {
      for (int j = 0; j <= cells; ++j) {
        const double w = wmax * i / cells;
        const double b = -bmax + 2.0 * bmax * j / cells;
        const double g = prob.value(w, b, rule);
        if (g > best) {
          best = g;
          bi = i;
          bj = j;
        }
      }
    }
    best_w = wmax * bi / cells;
    best_b = -bmax + 2.0 * bmax * bj / cells;
    const bool b_edge = bj == 0 || bj == cells;
    const bool w_edge = bi == cells;
    if (!b_edge && !w_edge) break;
    // the penalty on omega wins: the supremum is the omega = 0 boundary
    if (attempt >= 3 && b_edge && bi == 0) return boundary();
    if (attempt >= 3)
      throw NumericalError("first-phase free energy has no interior extremum in omega <= " + std::to_string(wmax) +
                           ", |b| <= " + std::to_string(bmax));
    if (b_edge) bmax *= 2.0;
    if (w_edge) wmax *= 2.0;
  }

  auto sol = newton_maximize(prob, best_w, best_b, order, cfg.max_iter);
  while (order < cfg.max_quad_order && moment_disagreement(p, sol.omega, sol.b, kt, order) > 1e-13) {
    order *= 2;
    sol = newton_maximize(prob, sol.omega, sol.b, order, cfg.max_iter);
  }
  const double disagreement = order < cfg.max_quad_order ? 0.0 : moment_disagreement(p, sol.omega, sol.b, kt, order / 2);
  if (disagreement > cfg.solver_tol)
    throw NumericalError("quadrature order " + std::to_string(order) + " insufficient at omega = " +
                         std::to_string(sol.omega));
  if (std::abs(sol.b) > 2.0 * bmax || sol.omega > 2.0 * wmax)
    throw NumericalError("first-phase refinement left the search box");

  o.omega = sol.omega;
  o.b = sol.b;
  o.quad_order = order;
  fill_first_phase(o, n, sigma, lambda, ell, kt, p, order);
  return o;
}

OverlapSet solve_second_phase(double n, double sigma, double lambda, double tau, SecondPhaseForm form,
                              NoisePairing pairing) {
  check_common(n, sigma, lambda);
  if (!(tau >= 0.0 && tau <= 1.0)) throw ValidationError("tau", "must lie in [0, 1]");
  const double s2 = sigma * sigma;
  const double ln = lambda + n;
  const double a = 1.0 - tau;

  double num, den;
  if (form == SecondPhaseForm::closed_form) {
    num = tau * ((1.0 + s2) * ln - (sigma + n));
    den = ln * ((1.0 - tau * tau) + (1.0 + s2) * tau * tau) + (a * a - tau * tau * (sigma + n));
  } else {
    num = tau * ((1.0 + s2) * ln - (s2 + n));
    den = ln * (a * a + (1.0 + s2) * tau * tau) - tau * tau * (s2 + n);
    if (pairing == NoisePairing::paired) den -= a * a;
  }
  if (std::abs(den) < 1e-300) {
    if (std::abs(num) > 1e-300) throw NumericalError("second-phase skip weight: vanishing denominator");
    den = 1.0;  // 0/0: every c is stationary (n = 1, lambda = 0); pick c = 0
    num = 0.0;
  }

  OverlapSet o;
  o.phase = Phase::second;
  o.tau = tau;
  o.n = n;
  o.c = num / den;
  o.m = n * (1.0 - o.c * tau) / ln;
  o.q_eta = sigma * (1.0 - o.c * tau) / ln;
  if (pairing == NoisePairing::fresh)
    o.q_xi = 0.0;
  else if (form == SecondPhaseForm::closed_form)
    o.q_xi = o.c * a / ln;
  else
    o.q_xi = -o.c * a / ln;
  o.q = o.m * o.m + n * o.q_xi * o.q_xi + n * o.q_eta * o.q_eta;
  return o;
}

OverlapSet limit_overlaps(Phase phase, double p, double sigma, double arg, SecondPhaseForm form) {
  check_p(p);
  if (!(sigma > 0.0)) throw ValidationError("mixture.sigma", "must be positive");
  OverlapSet o;
  o.phase = phase;
  o.n = std::numeric_limits<double>::infinity();
  if (phase == Phase::first) {
    if (!(arg >= 0.0)) throw ValidationError("kt", "must be non-negative");
    o.kt = arg;
    o.b = std::atanh(2.0 * p - 1.0);
    o.omega = arg;
    o.r = arg * arg;
    o.m = 1.0;
    o.q = 1.0;
    o.c = o.q_xi = o.q_eta = o.p_eta = o.p_xi = 0.0;
  } else {
    if (!(arg >= 0.0 && arg <= 1.0)) throw ValidationError("tau", "must lie in [0, 1]");
    const double s2 = sigma * sigma;
    o.tau = arg;
    const double den = form == SecondPhaseForm::closed_form ? 1.0 + (s2 - 1.0) * arg * arg
                                                          : (1.0 - arg) * (1.0 - arg) + s2 * arg * arg;
    o.c = arg * s2 / den;
    o.m = 1.0 - o.c * arg;
    o.q = o.m * o.m;
    o.q_xi = o.q_eta = 0.0;
  }
  return o;
}

OverlapSet measure_overlaps(const SliceParams& theta, const Dataset& data, const MixtureParams& params, Phase phase) {
  const auto d = static_cast<double>(params.d);
  if (theta.u.size() != params.d || theta.w.size() != params.d)
    throw ValidationError("theta", "dimension does not match the mixture");
  if (data.n() == 0) throw ValidationError("dataset", "must not be empty");

  OverlapSet o;
  o.phase = phase;
  o.t = theta.t;
  o.n = static_cast<double>(data.n());
  o.m = params.mu.dot(theta.u) / d;
  o.omega = params.mu.dot(theta.w) / d;
  o.r = theta.w.squaredNorm() / d;
  o.q = theta.u.squaredNorm() / d;
  o.c = theta.c;
  o.b = theta.b;

  double qe = 0.0, pe = 0.0, qx = 0.0, px = 0.0;
  bool paired = true;
  for (const auto& s : data.samples) {
    if (s.z.size() != params.d) throw ValidationError("dataset", "sample dimension does not match the mixture");
    qe += s.s * s.z.dot(theta.u);
    pe += s.s * s.z.dot(theta.w);
    if (s.x0.size() == params.d) {
      qx += s.s * s.x0.dot(theta.u);
      px += s.s * s.x0.dot(theta.w);
    } else {
      paired = false;
    }
  }
  const double scale = 1.0 / (d * o.n);
  o.q_eta = qe * scale;
  o.p_eta = pe * scale;
  if (paired) {
    o.q_xi = qx * scale;
    o.p_xi = px * scale;
  }
  // f is unchanged by (u, w, b) -> (-u, -w, -b); report the branch with m >= 0.
  if (o.m < 0.0) {
    o.m = -o.m;
    o.omega = -o.omega;
    o.b = -o.b;
    o.q_eta = -o.q_eta;
    o.p_eta = -o.p_eta;
    o.q_xi = -o.q_xi;
    o.p_xi = -o.p_xi;
  }
  return o;
}

double mse_theory(const OverlapSet& o, double p, double sigma, MseKind which, SampleRegime regime, int quad_order) {
  check_p(p);
  const double s2 = sigma * sigma;
  if (o.phase == Phase::first) {
    double A, B;
    if (o.saturated) {
      const double phi = std::copysign(1.0, o.b);
      A = phi * (2.0 * p - 1.0);
      B = 1.0;
    } else {
      const auto [a, bb] = ab_moments(p, o.omega, o.b, o.kt, gauss_hermite(quad_order));
      A = a;
      B = bb;
    }
    if (regime == SampleRegime::infinite) return s2 + 1.0 - A;
    const double c = std::isnan(o.c) ? 0.0 : o.c;
    const double base = 1.0 + s2 + c * c + o.q * B;
    if (which == MseKind::test) return base - 2.0 * A * o.m;
    const double qxi = std::isnan(o.q_xi) ? 0.0 : o.q_xi;
    return base - 2.0 * A * (o.m + sigma * o.q_eta - c * qxi);
  }
  const double tau = o.tau;
  const double a = 1.0 - tau;
  const double e = 1.0 - o.c * tau;
  if (regime == SampleRegime::infinite) return s2 * e * e + o.c * o.c * a * a;
  const double base = (1.0 + s2) * e * e + o.c * o.c * a * a + o.q - 2.0 * e * o.m;
  if (which == MseKind::test) return base;
  const double qxi = std::isnan(o.q_xi) ? 0.0 : o.q_xi;
  return base - 2.0 * e * sigma * o.q_eta + 2.0 * o.c * a * qxi;
}

}  // namespace gmflow
