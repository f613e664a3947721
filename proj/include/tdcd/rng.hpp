#pragma once

// Seeded randomness used everywhere in the library.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. The standard distributions are not portable across library
// implementations, so integer and normal variates are derived here:
//   uniform_below(n)  rejection sampling on raw 64-bit draws
//   uniform01()       top 53 bits scaled to [0, 1)
//   normal()          Box-Muller, both variates of a pair used in order
// Per-round streams are seeded with splitmix64 mixing of (seed, round).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace tdcd {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_below(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = engine_();
      if (r >= threshold) return r % n;
    }
  }

  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // 1 - u keeps the log argument in (0, 1].
    const double u1 = 1.0 - uniform01();
    const double u2 = uniform01();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Independent stream for communication round `round` of a run seeded with `seed`.
inline Rng round_stream(std::uint64_t seed, std::uint64_t round) {
  return Rng(splitmix64(seed ^ splitmix64(round + 0x5DEECE66DULL)));
}

/// Draws `count` distinct elements of `population` by a partial Fisher-Yates
/// shuffle; the result is in draw order.
inline std::vector<std::size_t> draw_without_replacement(Rng& rng,
                                                         std::span<const std::size_t> population,
                                                         std::size_t count) {
  std::vector<std::size_t> pool(population.begin(), population.end());
  const std::size_t n = pool.size();
  if (count > n) count = n;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t pick = i + static_cast<std::size_t>(rng.uniform_below(n - i));
    std::swap(pool[i], pool[pick]);
  }
  pool.resize(count);
  return pool;
}

}  // namespace tdcd
