#pragma once

#include <cstdint>

#include "msam/tensor.hpp"

namespace msam {

/// SplitMix64 generator (Steele, Lea & Flood 2014).
///
/// state += 0x9E3779B97F4A7C15, then the output is the state passed through
/// the two xor-shift-multiply rounds below. Uniform doubles use the top 53
/// bits. Normals use the Marsaglia polar method with one cached deviate, so
/// streams depend only on IEEE arithmetic plus std::log and std::sqrt.
///
/// split() derives an independent child stream by seeding a new generator
/// with the next output mixed with a fixed odd constant.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1).
  double uniform() noexcept;
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;
  double normal() noexcept;
  Rng split() noexcept;

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Mixes several values into one seed; used to derive per-epoch streams.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) noexcept;

Tensor randn(Rng& rng, Shape shape);

}  // namespace msam
