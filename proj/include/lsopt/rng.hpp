#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

#include "lsopt/errors.hpp"

namespace lsopt {

// Mixes a master seed with a salt into an independent stream seed
// (splitmix64 finalizer).  Used to derive per-component substreams so that
// adding a consumer never perturbs the draws seen by another.
inline std::uint64_t split_seed(std::uint64_t master, std::uint64_t salt) {
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic random source.  The engine is std::mt19937_64 (its output
// sequence is pinned by the standard); the derived draws below are written
// out explicitly because std::*_distribution is implementation-defined and
// would break cross-toolchain reproducibility.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform double in [0, 1) with 53 random bits.
  double next_unit() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform index in [0, n); rejection sampling keeps it exactly unbiased.
  std::size_t next_index(std::size_t n) {
    if (n == 0) throw InvalidInputError("next_index: n must be positive");
    const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
    const std::uint64_t overflow = (max % n + 1) % n;  // 2^64 mod n
    std::uint64_t x = engine_();
    while (overflow != 0 && x > max - overflow) x = engine_();
    return static_cast<std::size_t>(x % n);
  }

  // Standard normal via Box-Muller; the cosine twin is cached.
  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_unit();
    while (u1 <= 0.0) u1 = next_unit();  // avoid log(0)
    const double u2 = next_unit();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.14159265358979323846 * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace lsopt
