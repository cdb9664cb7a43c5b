#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace mtsct {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Independent child seed from a root seed and a path of stream labels (subject index, epoch, ...).
inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = splitmix64(root);
  for (auto p : path) s = splitmix64(s ^ splitmix64(p + 0x632BE59BD9B4E019ULL));
  return s;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double gaussian(Rng& rng, double sigma) { return std::normal_distribution<double>(0.0, sigma)(rng); }

}  // namespace mtsct
