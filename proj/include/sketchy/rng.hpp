#pragma once

#include <array>
#include <cstdint>

namespace sketchy {

/// Seeded pseudo-random source used everywhere randomness is needed.
///
/// The generator is xoshiro256** with its state expanded from the 64-bit seed
/// by splitmix64. Normal variates use the Box-Muller transform; the second
/// variate of each pair is cached, so the stream of normals is a fixed
/// function of the seed. Nothing here depends on the standard library's
/// distribution implementations, which differ across vendors.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept;

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept;

  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;

  // Uniform integer on [0, bound). bound must be positive.
  std::uint64_t uniform_index(std::uint64_t bound) noexcept;

  double normal() noexcept;

  // Independent child stream; advances this generator by one draw.
  Rng split() noexcept;

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace sketchy
