// Built-in oracle suites behind the selftest command: posterior and
// likelihood against the dense reference solver, alignment recovery on
// constructed transforms, and maxima detection on constructed fields.

#pragma once

#include <string>
#include <vector>

namespace mgprl {

// Documented test hooks: each fault perturbs one pipeline so the
// corresponding suite must report a failure.
enum class FaultInjection {
    none,
    gp_mean_bias,         // adds 1e-3 dBm to predicted means before comparison
    align_rotation_bias,  // skews recovered rotations by 1e-3 rad
    maxima_drop,          // discards one detected maximum
};

FaultInjection fault_from_name(const std::string& name);

struct SelftestEntry {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct SelftestReport {
    std::vector<SelftestEntry> entries;
    bool all_passed() const;
};

SelftestReport run_selftest(FaultInjection fault = FaultInjection::none);

}  // namespace mgprl
