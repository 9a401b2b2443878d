// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace dsp {

/// Seeded generator with a fully specified update rule so that any
/// implementation can reproduce the same streams:
///
///   state  <- state + 0x9E3779B97F4A7C15            (mod 2^64)
///   z      <- state
///   z      <- (z xor (z >> 30)) * 0xBF58476D1CE4E5B9
///   z      <- (z xor (z >> 27)) * 0x94D049BB133111EB
///   output <- z xor (z >> 31)
///
/// Derived draws:
///   uniform()      = (output >> 11) * 2^-53                 in [0, 1)
///   below(n)       = floor(output * n / 2^64)               in [0, n)
///   normal()       = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)     (two uniforms, sine discarded)
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    state_ += 0x9E3779B97F4A7C15ULL;
    return finalize(state_);
  }

  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Multiply-high range reduction: floor(next() * n / 2^64).
  std::uint64_t below(std::uint64_t n) noexcept {
    __extension__ using u128 = unsigned __int128;
    return static_cast<std::uint64_t>((static_cast<u128>(next()) * n) >> 64);
  }

  double normal() noexcept {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t state() const noexcept { return state_; }

  static constexpr std::uint64_t finalize(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

// Order-sensitive seed derivation for independent sub-streams, e.g.
// derive_seed(seed, {block, step, phase}).
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = SeededRng::finalize(seed + 0x9E3779B97F4A7C15ULL);
  for (std::uint64_t p : parts) {
    h = SeededRng::finalize(h ^ (p + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2)));
  }
  return h;
}

}  // namespace dsp
