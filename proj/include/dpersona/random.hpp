#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "dpersona/hashing.hpp"

namespace dpersona {

using Rng = std::mt19937_64;

template <typename T>
std::vector<T> standard_normal(Rng& rng, std::size_t n) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<T> out(n);
  for (auto& v : out) v = static_cast<T>(dist(rng));
  return out;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_index(Rng& rng, int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); }

}  // namespace dpersona
