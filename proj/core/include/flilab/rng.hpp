#pragma once

#include <cstdint>
#include <limits>

namespace flilab {

/// SplitMix64 finaliser: a bijective 64-bit mixing function.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Key for an independent stream identified by (seed, a, b).
constexpr std::uint64_t stream_key(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) noexcept {
  return mix64(mix64(mix64(seed ^ 0x6a09e667f3bcc909ULL) ^ (a + 0x9e3779b97f4a7c15ULL)) ^
               (b + 0x3c6ef372fe94f82bULL));
}

/// Counter-based generator: the i-th output is a pure function of (key, i),
/// so a pixel's random stream depends only on the master seed and the pixel
/// index, never on the order in which pixels are processed.
///
/// Satisfies UniformRandomBitGenerator, so std distributions accept it.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t substream = 0) noexcept
      : key_(stream_key(seed, stream, substream)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept { return mix64(key_ + (++counter_) * 0x9e3779b97f4a7c15ULL); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace flilab
