#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace doda {

/// Mixes a parent seed with a label and index into an independent child seed.
/// Used to carve named substreams (spawning, noise, masks, ...) out of one
/// master seed.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view label,
                          std::uint64_t index = 0);

/// Seeded random source. The engine is std::mt19937_64; the mapping from raw
/// bits to variates is done here rather than through <random> distributions,
/// whose output is implementation-defined, so streams are identical across
/// standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// True with probability p.
  bool bernoulli(double p) { return uniform() < p; }

  /// Uniform integer in [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n);

  /// Index drawn from a discrete distribution. Consumes exactly one uniform
  /// draw; a point mass always returns its support index.
  std::size_t categorical(std::span<const double> probs);

  Rng child(std::string_view label, std::uint64_t index = 0) {
    return Rng(derive_seed(next_u64(), label, index));
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace doda
