// SPDX-License-Identifier: Apache-2.0
#pragma once

// Deterministic random streams. Everything here is bit-reproducible across
// platforms: no std::*_distribution (their algorithms are unspecified).

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string_view>

#include "tokshift/dist_core.hpp"

namespace tokshift::rng {

/// SplitMix64 finalizer; a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t combine(std::uint64_t key, std::uint64_t value) noexcept {
  return mix64(key ^ mix64(value + 0x632BE59BD9B4E019ULL));
}

/// 64-bit FNV-1a, used for config hashes and string keys.
constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Top 53 bits -> [0, 1).
constexpr double to_unit(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Same, mapped to (0, 1) so logs are finite.
constexpr double to_open_unit(std::uint64_t bits) noexcept {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

/// Counter-based standard normal via Box-Muller on two keyed draws.
inline double keyed_normal(std::uint64_t key, std::uint64_t counter) noexcept {
  const double u1 = to_open_unit(combine(key, 2 * counter));
  const double u2 = to_unit(combine(key, 2 * counter + 1));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Seeded sequential stream of uniforms in [0, 1).
class UniformStream {
 public:
  explicit UniformStream(std::uint64_t seed) : engine_(seed) {}
  double next() { return to_unit(engine_()); }

 private:
  std::mt19937_64 engine_;
};

/// Seed for sample `index` of a run keyed by `seed`.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  return combine(seed, index);
}

/// Inverse-CDF draw over descending-rank order (ties by id). Returns the
/// last ranked token if rounding leaves u beyond the accumulated mass.
inline TokenId inverse_cdf(const Distribution& d, double u) {
  const auto order = d.rank_order();
  long double cum = 0.0L;
  for (const std::size_t i : order) {
    cum += d.probs()[i];
    if (static_cast<long double>(u) < cum) return d.support()[i];
  }
  return d.support()[order.back()];
}

}  // namespace tokshift::rng
