// Deterministic seeded random streams. All simulator randomness flows through
// these so a replay with the same master seed is bit-identical regardless of
// platform or thread schedule.

#pragma once

#include <cstdint>
#include <string_view>

namespace mgprl {

// xoshiro256++ seeded through splitmix64. Self-contained so draws do not
// depend on standard-library distribution internals.
class Rng {
public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();

    // Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);

    // Standard normal via Box-Muller (one spare cached).
    double gaussian();
    double gaussian(double mean, double sigma);

private:
    uint64_t state_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Derives an independent child seed from (seed, label, index). Used to hand
// each consumer (robot walk, per-AP noise, optimizer restarts, ...) its own
// stream.
uint64_t derive_seed(uint64_t seed, std::string_view label, uint64_t index = 0);

}  // namespace mgprl
