#pragma once

// Seeded random helpers whose output depends only on the seed (no reliance on
// implementation-defined std:: distributions), so checkpoints and corpora are
// byte-identical across standard libraries.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "scm/tensor.hpp"

namespace scm {

using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, n). n must be positive.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

inline double normal(Rng& rng, double mean, double stddev) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

inline void fill_normal(Tensor& t, Rng& rng, double stddev) {
  for (double& x : t.data()) x = normal(rng, 0.0, stddev);
}

/// Glorot/Xavier uniform for a [fan_in x fan_out] weight.
inline void fill_xavier(Tensor& t, Rng& rng) {
  const double fan_in = static_cast<double>(t.rows());
  const double fan_out = static_cast<double>(t.cols());
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& x : t.data()) x = (2.0 * uniform01(rng) - 1.0) * a;
}

}  // namespace scm
