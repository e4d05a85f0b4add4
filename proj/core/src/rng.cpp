#include "gmflow/rng.hpp"

#include <boost/random/normal_distribution.hpp>

namespace gmflow {

std::uint64_t CounterRng::mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t stream)
    : key_(mix(mix(seed + kGolden) ^ (stream * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL))) {}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  // FNV-1a over the label, folded into the parent seed.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : label) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return CounterRng::mix(CounterRng::mix(seed) ^ h);
}

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = CounterRng::mix(seed ^ 0x5851f42d4c957f2dULL);
  for (std::uint64_t p : path) h = CounterRng::mix(h ^ CounterRng::mix(p + 0x14057b7ef767814fULL));
  return h;
}

void fill_normal(CounterRng& rng, std::span<double> out) {
  boost::random::normal_distribution<double> normal;
  for (double& x : out) x = normal(rng);
}

double draw_normal(CounterRng& rng) {
  boost::random::normal_distribution<double> normal;
  return normal(rng);
}

}  // namespace gmflow
