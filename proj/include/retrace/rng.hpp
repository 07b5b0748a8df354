#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>

namespace retrace {

/// Counter-based 64-bit generator (SplitMix64). The exact update is fixed so
/// that other implementations of this library can reproduce identical
/// streams; see the RNG section of the README for the contract.
///
///   state += 0x9E3779B97F4A7C15
///   z = state
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   return z ^ (z >> 31)
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1), 53 mantissa bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi).
  double next_double(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  /// Uniform integer in [0, n). Computed as floor(u * n) from a [0,1)
  /// draw, which is the documented cross-implementation convention.
  int next_index(int n) {
    if (n <= 0) throw std::invalid_argument("next_index: n must be positive");
    int i = static_cast<int>(next_double() * n);
    return i < n ? i : n - 1;
  }

  /// Samples an index from an unnormalized non-negative weight vector by
  /// walking the cumulative sum in index order.
  int next_discrete(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (total <= 0.0)
      throw std::invalid_argument("next_discrete: weights sum to zero");
    double u = next_double() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }

 private:
  std::uint64_t state_;
};

/// Derives a child seed for block or episode `index` from a master seed.
/// Fixed formula so parallel and sequential runs agree.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  SplitMix64 g(master ^ (0x9E3779B97F4A7C15ULL * (index + 1)));
  return g.next_u64();
}

}  // namespace retrace
