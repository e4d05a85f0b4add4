#pragma once

#include <functional>
#include <limits>
#include <string>

#include "gmflow/dae.hpp"
#include "gmflow/mixture.hpp"

namespace gmflow {

enum class Phase { first, second };
std::string to_string(Phase phase);

/// Which closed form gives the second-phase skip weight c.
///  closed_form: a direct expression in (n, sigma, lambda, tau), whose large-n limit is
///               tau s^2 / (1 + (s^2 - 1) tau^2).
///  stationary: the solution of the second-phase stationarity equations,
///              whose large-n limit is the exact-denoiser weight tau s^2 / ((1 - tau)^2 + s^2 tau^2).
enum class SecondPhaseForm { closed_form, stationary };

/// paired: one base-noise draw per sample, reused at every time (q_xi != 0).
/// fresh:  infinitely many base-noise draws per sample (q_xi = 0).
enum class NoisePairing { paired, fresh };

enum class MseKind { train, test };
enum class SampleRegime { finite, infinite };

struct Residuals {
  double b_eq = 0.0;      // (lambda + n B) E[phi' s] = n A E[phi phi']
  double rhat_eq = 0.0;   // conjugate r-hat from the second-derivative form vs the Z-weighted form
  double omega_eq = 0.0;  // omega (ell + r-hat)(lambda + n B)^2 = n kt (s^2 + n)(...)

  double max() const;
};

/// Order parameters of a trained slice, predicted or measured. Fields a
/// prediction does not determine are NaN.
struct OverlapSet {
  static constexpr double nan = std::numeric_limits<double>::quiet_NaN();

  Phase phase = Phase::first;
  double t = nan;
  double kt = nan;   // first phase: kappa t
  double tau = nan;  // second phase
  double n = nan;    // +inf for the infinite-sample limit
  double m = nan;
  double omega = nan;
  double r = nan;
  double q = nan;
  double q_xi = nan;
  double q_eta = nan;
  double p_eta = nan;
  double p_xi = nan;
  double c = nan;
  double b = nan;
  /// First phase at kt = 0 with p != 1/2: the supremum sits at b = +-inf.
  bool saturated = false;
  double rhat = nan;
  Residuals residuals;
  int quad_order = 0;
};

struct SaddleConfig {
  int quad_order = 64;
  double solver_tol = 1e-10;
  int max_iter = 200;
  /// Search box for (omega, b): omega in [0, omega_max], b in [-b_max, b_max].
  /// omega_max <= 0 picks max(2, 1.5 kt + 1).
  double omega_max = 0.0;
  double b_max = 6.0;
  int scan_cells = 80;
  int max_quad_order = 2048;
};

void validate(const SaddleConfig& cfg);

/// Point of the first-phase average: s = +-1, z ~ N(0,1), arg = b + kt omega s + omega z.
struct GmPoint {
  double s;
  double z;
  double arg;
};

/// p E_Z[g(+1, Z)] + (1 - p) E_Z[g(-1, Z)] by Gauss-Hermite. With tol > 0
/// the order-2N rule must agree to tol or NumericalError is thrown.
double gm_average(const std::function<double(const GmPoint&)>& g, double p, double omega, double b, double kt,
                  int order, double tol = 0.0);

/// Averages of phi = tanh(arg) and its derivatives at one (omega, b).
struct PhiMoments {
  double A = 0.0;        // E[phi s]
  double B = 0.0;        // E[phi^2]
  double P1 = 0.0;       // E[phi']
  double P1s = 0.0;      // E[phi' s]
  double P1x = 0.0;      // E[phi' s (kt s + Z)]
  double P1sz = 0.0;     // E[phi' s Z]
  double P2s = 0.0;      // E[phi'' s]
  double PP = 0.0;       // E[phi phi']
  double PPs = 0.0;      // E[phi phi' s]
  double PPx = 0.0;      // E[phi phi' (kt s + Z)]
  double PPz = 0.0;      // E[phi phi' Z]
  double dPP = 0.0;      // E[(phi phi')'] = E[phi'^2 - 2 phi^2 phi']
};

PhiMoments phi_moments(double p, double omega, double b, double kt, int order);

/// n (s^2 + n) A^2 / (2 (lambda + n B)) - ell omega^2 / 2.
double first_phase_free_energy(double n, double p, double sigma, double lambda, double ell, double kt, double omega,
                               double b, int order);

OverlapSet solve_first_phase(double n, double p, double sigma, double lambda, double ell, double kt,
                             const SaddleConfig& cfg = {});

OverlapSet solve_second_phase(double n, double sigma, double lambda, double tau,
                              SecondPhaseForm form = SecondPhaseForm::closed_form,
                              NoisePairing pairing = NoisePairing::paired);

/// Infinite-sample overlaps; `arg` is kt (first phase) or tau (second phase).
OverlapSet limit_overlaps(Phase phase, double p, double sigma, double arg,
                          SecondPhaseForm form = SecondPhaseForm::closed_form);

/// Overlaps of trained parameters against the dataset, with the per-sample
/// sign convention q_eta = mean_mu s z.u / d and so on. q_xi, p_xi stay NaN
/// without paired noise. Reported on the sign branch with m >= 0.
OverlapSet measure_overlaps(const SliceParams& theta, const Dataset& data, const MixtureParams& params, Phase phase);

/// Scaled train or test MSE (1/d) E|f(x_t) - x_1|^2 predicted from the overlaps.
double mse_theory(const OverlapSet& overlaps, double p, double sigma, MseKind which, SampleRegime regime,
                  int quad_order = 256);

}  // namespace gmflow
