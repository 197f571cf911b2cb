#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace chainsgd {

/*! Counter-style PRNG built on the SplitMix64 mixer.
 *
 *  Every consumer derives its own stream from a master seed plus a tuple of
 *  context words (iteration, layer, pass, ...), so enabling or disabling one
 *  perturbation source never shifts the draws seen by another. The engine is
 *  fully specified here, independent of the standard library, which keeps
 *  output byte-stable across platforms and toolchains.
 */
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  result_type operator()() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform01();
  }

  /// Standard normal via Box-Muller (no cached spare, draws two uniforms).
  double normal() {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::uint64_t state_;
};

/// Hashes a tuple of context words into an independent stream seed.
inline std::uint64_t derive_stream(std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = 0x8f1bbcdcbfa53e0bULL;
  for (std::uint64_t w : words) {
    h ^= w + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    SplitMix64 mix(h);
    h = mix();
  }
  return h;
}

}  // namespace chainsgd
