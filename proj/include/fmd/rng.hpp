#pragma once

#include <cstdint>

#include "fmd/matrix.hpp"

namespace fmd {

// SplitMix64 generator. Fixed algorithm, bit-exact across platforms; the
// same seed always yields the same stream. An Rng is a value advanced
// explicitly by the caller; never share one instance across threads.
struct Rng {
  uint64_t state = 0;

  explicit Rng(uint64_t seed) : state(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1), 53 mantissa bits. Exact integer-to-double
  // scaling, so the stream is platform-stable bit for bit.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }
};

// One standard-normal pair via the Box-Muller transform. Consumes exactly
// two uniform draws.
void gaussian_pair(Rng& rng, double& z0, double& z1);

// Matrix of i.i.d. normal draws, filled row-major, two entries per
// Box-Muller pair (the trailing half-pair of an odd-sized fill is
// discarded). std == 0 collapses every entry to mean.
Matrix seeded_gaussian(Rng& rng, int rows, int cols, double mean, double stddev);

}  // namespace fmd
