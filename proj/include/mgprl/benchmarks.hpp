// Timing benchmarks shared by the bench tool and the acceptance suite.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mgprl {

struct FitScalingRow {
    int gamma = 0;
    int outputs = 0;
    double joint_seconds = 0.0;        // one co-regionalized fit over m outputs
    double independent_seconds = 0.0;  // m single-output fits on the same data
    double ratio = 0.0;                // joint / independent
};

// Measures joint-vs-independent training cost at equal optimizer budget on
// synthetic isotopic data (same observations both ways).
std::vector<FitScalingRow> fit_scaling_benchmark(const std::vector<int>& gammas, int outputs,
                                                 int opt_iters, uint64_t seed);
std::string fit_scaling_csv(const std::vector<FitScalingRow>& rows);

struct AlignScalingRow {
    int total_estimates = 0;   // M_total across both messages
    double seconds = 0.0;      // hull + pairing search, averaged over repeats
};

// Correspondence-search cost as the AP estimate count grows (fixed candidate
// count per AP).
std::vector<AlignScalingRow> align_scaling_benchmark(const std::vector<int>& ap_counts,
                                                     int candidates_per_ap, int repeats,
                                                     uint64_t seed);
std::string align_scaling_csv(const std::vector<AlignScalingRow>& rows);

}  // namespace mgprl
