#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <vector>

namespace gmflow {

using Vector = Eigen::VectorXd;
/// K x d block of states, one trajectory (or sample) per row.
using StateMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class MuStyle { all_ones, random_signs, explicit_vector };

/// How the mode direction mu is chosen. Any choice must satisfy |mu|^2 = d.
struct MuChoice {
  MuStyle style = MuStyle::all_ones;
  std::uint64_t seed = 0;  // random_signs only
  Vector values;           // explicit_vector only

  static MuChoice all_ones() { return {}; }
  static MuChoice random_signs(std::uint64_t seed) { return {MuStyle::random_signs, seed, {}}; }
  static MuChoice explicit_vector(Vector v) { return {MuStyle::explicit_vector, 0, std::move(v)}; }
};

/// p N(mu, sigma^2 I) + (1-p) N(-mu, sigma^2 I) in dimension d.
struct MixtureParams {
  int d = 0;
  double p = 0.5;
  double sigma = 1.0;
  Vector mu;
  double h = 0.0;  // atanh(2p - 1): tilt of the exact denoiser
};

struct MixtureOptions {
  /// Point-mass modes. Only meant for sanity tests.
  bool allow_zero_sigma = false;
};

MixtureParams make_mixture(int d, double p, double sigma, const MuChoice& mu = MuChoice::all_ones(),
                           MixtureOptions options = {});

struct Sample {
  std::uint64_t id = 0;  // draw index; keys the per-sample random streams
  int s = 1;             // mode sign
  Vector z;              // within-mode noise
  Vector x1;             // s * mu + sigma * z
  Vector x0;             // paired base-noise draw (empty when not drawn)
};

struct Dataset {
  std::vector<Sample> samples;
  Vector eta;                 // sigma * sum_mu z^mu
  std::optional<Vector> xi;   // sum_mu s^mu x0^mu, present with paired noise

  std::size_t n() const { return samples.size(); }
  bool has_paired_noise() const { return xi.has_value(); }
  double positive_fraction() const;
};

/// sigma * sum_mu s^mu z^mu. The noise direction the learned u picks up under
/// the sign convention of the per-sample overlaps.
Vector signed_eta(const Dataset& data, double sigma);

enum class LabelSampling {
  iid,         // s = +1 with probability p, independently
  stratified,  // exactly round(p n) positive labels, randomly placed
};

struct DatasetOptions {
  LabelSampling labels = LabelSampling::iid;
  bool paired_noise = true;
};

Dataset sample_dataset(const MixtureParams& params, int n, std::uint64_t seed, DatasetOptions options = {});

/// `count` x d block of i.i.d. standard normal rows; row i depends only on (seed, i).
StateMatrix sample_noise(int d, int count, std::uint64_t seed);

struct ProjectionStats {
  double t = 0.0;
  std::vector<double> M;   // mu . X / d
  std::vector<double> nu;  // mu . X / sqrt(d)
  double orth_variance = 0.0;
};

/// Projections of a point cloud on mu and the pooled per-coordinate second
/// moment of the components orthogonal to mu (d - 1 directions per row).
ProjectionStats projection_stats(const MixtureParams& params, const StateMatrix& states, double t);

}  // namespace gmflow
