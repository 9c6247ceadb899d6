#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string_view>

namespace mfcn {

// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

// Derives an independent substream key from (master seed, purpose tag, index).
// Every random quantity in the library is addressed through such a key, so
// results never depend on scheduling or on the number of workers.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                          std::uint64_t index = 0);

// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
std::array<std::uint32_t, 4> philox4x32(std::uint64_t key,
                                        std::array<std::uint32_t, 4> counter);

inline double to_unit(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Random draws addressed by a (key, a, b, c) tuple. Used for per-particle,
/// per-step variates: the same address always yields the same numbers.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}

  std::uint64_t key() const { return key_; }

  /// Two uniforms in [0, 1).
  std::array<double, 2> uniforms(std::uint32_t a, std::uint32_t b,
                                 std::uint32_t c) const;

  /// Two independent standard normals (Box-Muller on the pair of uniforms).
  std::array<double, 2> normals(std::uint32_t a, std::uint32_t b,
                                std::uint32_t c) const;

 private:
  std::uint64_t key_;
};

/// Sequential generator over a Philox stream; satisfies
/// UniformRandomBitGenerator so it can drive <random> distributions.
class StreamRng {
 public:
  using result_type = std::uint64_t;

  explicit StreamRng(std::uint64_t key) : key_(key) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()();

  double uniform() { return to_unit((*this)()); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mfcn
