#pragma once

#include <functional>
#include <vector>

namespace gmflow {

/// Gauss-Hermite rule for E[f(Z)], Z ~ N(0,1): E[f(Z)] ~ sum_i w_i f(x_i).
/// Weights sum to 1.
struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;

  int order() const { return static_cast<int>(nodes.size()); }
};

/// Golub-Welsch on the probabilists' Hermite Jacobi matrix. Rules are cached
/// per order; the reference stays valid for the life of the process.
const GaussHermiteRule& gauss_hermite(int order);

double gaussian_expectation(const std::function<double(double)>& f, int order);

/// Smallest order in {start, 2 start, 4 start, ...} up to max_order for
/// which the rule and its doubled rule agree on f to `tol` (absolute).
/// Returns max_order if none does.
int adequate_order(const std::function<double(double)>& f, int start, int max_order, double tol);

}  // namespace gmflow
