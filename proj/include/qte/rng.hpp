#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace qte {

using Rng = std::mt19937_64;

/**
 * Derive an independent generator for the stream identified by `seed` and a
 * path of sub-stream ids (replicate, chain, ...). The ids are mixed through
 * std::seed_seq so that neighbouring streams share no state.
 */
inline Rng make_stream(std::uint64_t seed,
                       std::initializer_list<std::uint64_t> path = {}) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * path.size());
  auto push = [&words](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto id : path) push(id + 0x9e3779b97f4a7c15ull);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double std_normal(Rng& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

/// Gamma draw with shape/rate parameterization.
inline double gamma_shape_rate(double shape, double rate, Rng& rng) {
  return std::gamma_distribution<double>(shape, 1.0 / rate)(rng);
}

}  // namespace qte
