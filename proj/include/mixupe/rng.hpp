#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

namespace mixupe {

/**
 * Deterministic random source for experiments.
 *
 * The engine is std::mt19937_64 (bit-identical everywhere), but every
 * distribution is implemented here rather than taken from <random>:
 * the standard leaves distribution algorithms implementation-defined, and
 * run reproducibility is part of the harness contract.
 */
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform on (0, 1), strictly open; safe under log().
  double uniform_open() {
    return (static_cast<double>(engine_() >> 12) + 0.5) * 0x1.0p-52;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (two engine draws per value).
  double normal() {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Unbiased integer in [0, n) by rejection.
  std::size_t uniform_index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: n must be > 0");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = engine_();
    while (v >= limit) v = engine_();
    return static_cast<std::size_t>(v % n);
  }

  /**
   * log of a Gamma(shape, 1) draw.
   *
   * Marsaglia-Tsang for shape >= 1; for shape < 1 the standard boost
   * G(a) = G(a+1) * U^(1/a) is applied in log space, which stays finite
   * for shapes as small as the experiment grids use (0.01).
   */
  double log_gamma_draw(double shape) {
    if (!(shape > 0.0))
      throw std::invalid_argument("log_gamma_draw: shape must be positive");
    if (shape < 1.0)
      return log_gamma_draw(shape + 1.0) + std::log(uniform_open()) / shape;

    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double t = 1.0 + c * x;
      if (t <= 0.0) continue;
      double v = t * t * t;
      double u = uniform_open();
      double x2 = x * x;
      if (u < 1.0 - 0.0331 * x2 * x2) return std::log(d * v);
      if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v)))
        return std::log(d * v);
    }
  }

  double gamma_draw(double shape) { return std::exp(log_gamma_draw(shape)); }

  /// Uniformly random permutation of [0, n) (Fisher-Yates).
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

 private:
  std::mt19937_64 engine_;
};

/// Stream derivation: independent child seed from (seed, tag) pairs.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag_a,
                                 std::uint64_t tag_b) {
  return derive_seed(derive_seed(seed, tag_a), tag_b);
}

}  // namespace mixupe
