#include "gmflow/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "gmflow/errors.hpp"
#include "gmflow/rng.hpp"

namespace gmflow {

MixtureParams make_mixture(int d, double p, double sigma, const MuChoice& mu, MixtureOptions options) {
  if (d < 2) throw ValidationError("d", "dimension must be at least 2, got " + std::to_string(d));
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("p", "must lie in (0,1), got " + std::to_string(p));
  if (!std::isfinite(sigma) || sigma < 0.0 || (sigma == 0.0 && !options.allow_zero_sigma))
    throw ValidationError("sigma", "must be positive, got " + std::to_string(sigma));

  MixtureParams params;
  params.d = d;
  params.p = p;
  params.sigma = sigma;
  params.h = std::atanh(2.0 * p - 1.0);

  switch (mu.style) {
    case MuStyle::all_ones:
      params.mu = Vector::Ones(d);
      break;
    case MuStyle::random_signs: {
      CounterRng rng(mu.seed, 0);
      params.mu.resize(d);
      for (int i = 0; i < d; ++i) params.mu[i] = (rng() >> 63) ? 1.0 : -1.0;
      break;
    }
    case MuStyle::explicit_vector: {
      if (mu.values.size() != d) throw ValidationError("mu", "explicit vector has wrong length");
      const double norm2 = mu.values.squaredNorm();
      if (std::abs(norm2 - d) > 1e-8 * d)
        throw ValidationError("mu", "explicit vector must satisfy |mu|^2 = d, got " + std::to_string(norm2));
      params.mu = mu.values;
      break;
    }
  }
  return params;
}

double Dataset::positive_fraction() const {
  if (samples.empty()) return 0.0;
  const auto pos = std::count_if(samples.begin(), samples.end(), [](const Sample& s) { return s.s > 0; });
  return static_cast<double>(pos) / static_cast<double>(samples.size());
}

Vector signed_eta(const Dataset& data, double sigma) {
  if (data.samples.empty()) return {};
  Vector out = Vector::Zero(data.samples.front().z.size());
  for (const auto& s : data.samples) out += s.s * s.z;
  return sigma * out;
}

Dataset sample_dataset(const MixtureParams& params, int n, std::uint64_t seed, DatasetOptions options) {
  if (n < 1) throw ValidationError("n", "sample count must be at least 1");
  const int d = params.d;

  std::vector<int> labels(n, -1);
  if (options.labels == LabelSampling::stratified) {
    const int positives = static_cast<int>(std::lround(params.p * n));
    std::fill(labels.begin(), labels.begin() + positives, 1);
    CounterRng shuffle_rng(derive_seed(seed, "labels"), 0);
    for (int i = n - 1; i > 0; --i) {
      const auto j = static_cast<int>(shuffle_rng() % static_cast<std::uint64_t>(i + 1));
      std::swap(labels[i], labels[j]);
    }
  }

  Dataset data;
  data.samples.resize(n);
  data.eta = Vector::Zero(d);
  if (options.paired_noise) data.xi = Vector::Zero(d);

  const std::uint64_t sample_seed = derive_seed(seed, "samples");
  for (int i = 0; i < n; ++i) {
    CounterRng rng(sample_seed, static_cast<std::uint64_t>(i));
    Sample& s = data.samples[i];
    s.id = static_cast<std::uint64_t>(i);
    const double u = rng.uniform();
    s.s = options.labels == LabelSampling::iid ? (u < params.p ? 1 : -1) : labels[i];
    s.z.resize(d);
    fill_normal(rng, {s.z.data(), static_cast<std::size_t>(d)});
    s.x1 = s.s * params.mu + params.sigma * s.z;
    data.eta += s.z;
    if (options.paired_noise) {
      s.x0.resize(d);
      fill_normal(rng, {s.x0.data(), static_cast<std::size_t>(d)});
      *data.xi += s.s * s.x0;
    }
  }
  data.eta *= params.sigma;
  return data;
}

StateMatrix sample_noise(int d, int count, std::uint64_t seed) {
  if (d < 1) throw ValidationError("d", "dimension must be positive");
  if (count < 1) throw ValidationError("count", "must be at least 1");
  StateMatrix out(count, d);
  for (int i = 0; i < count; ++i) {
    CounterRng rng(seed, static_cast<std::uint64_t>(i));
    fill_normal(rng, {out.row(i).data(), static_cast<std::size_t>(d)});
  }
  return out;
}

ProjectionStats projection_stats(const MixtureParams& params, const StateMatrix& states, double t) {
  if (states.cols() != params.d) throw ValidationError("states", "column count must equal d");
  const double d = params.d;
  const double sqrt_d = std::sqrt(d);
  ProjectionStats out;
  out.t = t;
  out.M.reserve(states.rows());
  out.nu.reserve(states.rows());
  double orth_sum = 0.0;
  for (Eigen::Index k = 0; k < states.rows(); ++k) {
    const auto x = states.row(k);
    const double dot = params.mu.dot(x.transpose());
    const double nu = dot / sqrt_d;
    out.nu.push_back(nu);
    out.M.push_back(nu / sqrt_d);
    orth_sum += (x.transpose() - (dot / d) * params.mu).squaredNorm();
  }
  if (states.rows() > 0) out.orth_variance = orth_sum / (static_cast<double>(states.rows()) * (d - 1.0));
  return out;
}

}  // namespace gmflow
