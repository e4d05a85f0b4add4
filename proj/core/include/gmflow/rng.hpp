#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string_view>

namespace gmflow {

/// Counter-based 64-bit generator. The n-th output is a pure function of
/// (key, n), so independent streams keyed by (seed, stream id) can be handed
/// to worker threads without any shared state.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, std::uint64_t stream);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  result_type operator()() {
    ++counter_;
    return mix(key_ + counter_ * kGolden);
  }

  void discard(std::uint64_t n) { counter_ += n; }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  static std::uint64_t mix(std::uint64_t z);

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Labeled seed splitting: derive a child seed from a parent seed and a label.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

/// Fills `out` with i.i.d. standard normal draws (ziggurat).
void fill_normal(CounterRng& rng, std::span<double> out);

double draw_normal(CounterRng& rng);

}  // namespace gmflow
