// Deterministic random number generation.
//
// Every random draw in the library comes from a named stream derived from one
// top-level seed. The splitting rule, fixed forever so runs reproduce across
// machines and library versions, is:
//
//   stream_seed = splitmix64(root_seed ^ fnv1a64(purpose) + 0x9E3779B97F4A7C15 * index)
//
// Gaussian samples use an explicit Box-Muller transform (std::normal_distribution
// is implementation-defined and would break cross-platform determinism).
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace gsup {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

/// Counter-free splitmix64 generator with explicit Box-Muller normals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  /// Named sub-stream of a root seed; `index` distinguishes repeated uses
  /// (e.g. one stream per training step or per scene).
  static Rng stream(std::uint64_t root_seed, std::string_view purpose,
                    std::uint64_t index = 0) {
    return Rng(splitmix64((root_seed ^ fnv1a64(purpose)) +
                          0x9E3779B97F4A7C15ull * index));
  }

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1).
  double uniform() {
    return double(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    // Rejection-free modulo is fine here: n is tiny relative to 2^64, the
    // bias is < n / 2^64 and determinism is all that matters.
    return next_u64() % n;
  }

  /// Standard normal via Box-Muller (caches the second sample).
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  /// Normal truncated to |x| <= 2*stddev (resampling), mean zero.
  double truncated_normal(double stddev) {
    for (;;) {
      const double x = normal();
      if (std::fabs(x) <= 2.0) return x * stddev;
    }
  }

 private:
  std::uint64_t state_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace gsup
