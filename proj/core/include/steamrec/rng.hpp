#pragma once

#include <cstdint>
#include <limits>
#include <random>

#include "steamrec/errors.hpp"

namespace steamrec {

// Deterministic random source. Every draw is derived from the raw
// mt19937_64 stream with fixed arithmetic, so results are identical across
// standard libraries and platforms (std::uniform_*_distribution makes no
// such promise).
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Uniform integer on [0, n). Rejection sampling keeps it unbiased.
  int below(int n) {
    if (n <= 0) throw ContractError("Rng::below requires n > 0, got " + std::to_string(n));
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit =
        std::numeric_limits<uint64_t>::max() - std::numeric_limits<uint64_t>::max() % un;
    uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return static_cast<int>(x % un);
  }

  // Uniform on [lo, hi).
  double uniform_range(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Derives a child seed from a parent seed and a stream index
  // (splitmix64-style finalizer). Used to give every (user, epoch) pair its
  // own independent stream regardless of scheduling.
  static uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 0x632be59bd9b4e019ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace steamrec
