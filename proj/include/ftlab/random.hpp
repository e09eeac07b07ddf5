#pragma once

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>
#include <boost/random/uniform_int_distribution.hpp>
#include <cstdint>
#include <initializer_list>

namespace ftlab {

// Boost distributions produce the same sequences on every platform, which
// the byte-identical run artifacts rely on.
using Rng = boost::random::mt19937_64;

// Mixes a base seed with stream labels (splitmix64 finalizer per label) so
// independent consumers never share a generator state.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> streams) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(seed);
  for (auto s : streams) h = mix(h ^ mix(s));
  return h;
}

inline double standard_normal(Rng& rng) {
  boost::random::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

inline double uniform01(Rng& rng) {
  boost::random::uniform_01<double> dist;
  return dist(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  boost::random::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(rng);
}

// Normal(0, std) resampled until it falls within two standard deviations.
inline double truncated_normal(Rng& rng, double std) {
  for (;;) {
    double z = standard_normal(rng);
    if (z >= -2.0 && z <= 2.0) return z * std;
  }
}

}  // namespace ftlab
