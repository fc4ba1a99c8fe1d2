#pragma once

#include <cstdint>

namespace masf {

// SplitMix64. All randomness in the project (init, shuffling, scene
// generation) flows through this generator so that results are identical
// across platforms and runs for a given seed.
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed = 0) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Uniform integer in [0, n).
    uint64_t next_below(uint64_t n) { return n ? next_u64() % n : 0; }

    // Derive an independent stream; used to hand per-worker / per-scene seeds out.
    SplitMix64 fork() { return SplitMix64(next_u64()); }

private:
    uint64_t state_;
};

}  // namespace masf
