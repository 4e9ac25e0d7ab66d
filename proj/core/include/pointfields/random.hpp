// Copyright Contributors to the pointfields Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace pf {

/// Seeded RNG used across the project; all stochastic components take one of
/// these explicitly so runs are reproducible.
using Rng = std::mt19937_64;

inline Rng make_rng(uint64_t seed) { return Rng(seed); }

/// Derives an independent stream from a base seed and a stream id.
inline Rng make_rng(uint64_t seed, uint64_t stream) {
  return Rng(seed * 0x9E3779B97F4A7C15ull + stream + 1);
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double normal(Rng& rng, double mean, double stddev) {
  return std::normal_distribution<double>(mean, stddev)(rng);
}

inline size_t uniform_index(Rng& rng, size_t n) {
  return std::uniform_int_distribution<size_t>(0, n - 1)(rng);
}

}  // namespace pf
