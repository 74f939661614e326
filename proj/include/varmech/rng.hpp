#pragma once

#include <cstdint>

namespace varmech {

// Deterministic, platform-independent PRNG (splitmix64 core).
// std::uniform_real_distribution is implementation-defined, so all random
// draws in the project go through this.
struct Rng {
  uint64_t state;

  explicit Rng(uint64_t seed = 0) : state(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // derive an independent stream, e.g. one per network or per sample
  Rng split(uint64_t tag) const {
    Rng r(state ^ (0x6a09e667f3bcc909ull + tag * 0x9e3779b97f4a7c15ull));
    r.next_u64();
    return r;
  }
};

} // namespace varmech
