#pragma once

#include <cstdint>

namespace advkit {

// splitmix64 step; used to derive independent sub-stream seeds from a base
// seed plus a salt. Stable across platforms.
uint64_t mix_seed(uint64_t seed, uint64_t salt);
uint64_t mix_seed(uint64_t seed, uint64_t salt_a, uint64_t salt_b);

// Deterministic PRNG (xoshiro256**) with self-contained sampling routines,
// so streams are bit-reproducible regardless of the standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  // Uniform in [0,1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller; draws are consumed in pairs.
  double normal();
  double normal(double stddev) { return normal() * stddev; }
  // Uniform integer in [0,n). n must be positive.
  uint64_t below(uint64_t n);
  // Independent derived stream.
  Rng fork(uint64_t salt);

 private:
  uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace advkit
