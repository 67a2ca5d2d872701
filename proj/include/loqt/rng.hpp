#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace loqt {

// Deterministic random source with a replayable position. All randomness in
// the project flows through this wrapper so that a (seed, draw_count) pair
// pins the exact stream position for checkpoint resume. normal() uses a
// cache-free Box-Muller transform so every call consumes a fixed number of
// engine draws, which keeps the draw counter honest.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

  std::uint64_t next_u64() {
    ++draws_;
    return engine_();
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). The modulo bias is irrelevant at the n we use
  // (vocabulary sizes, corpus offsets) and keeps the draw cost at one.
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller; consumes exactly two engine draws.
  double normal() {
    const double u1 =
        static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 =
        static_cast<double>(next_u64() >> 11) * 0x1.0p-53;  // [0, 1)
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586 * u2);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t draw_count() const { return draws_; }

  // Rewinds to `seed` then fast-forwards `draws` positions; afterwards the
  // stream continues exactly as it would have in the original run.
  void restore(std::uint64_t seed, std::uint64_t draws) {
    engine_.seed(seed);
    seed_ = seed;
    draws_ = draws;
    engine_.discard(draws);
  }

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_ = 0;
  std::uint64_t draws_ = 0;
};

}  // namespace loqt
