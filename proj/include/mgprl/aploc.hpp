// Uncertainty-aware AP position estimation: coarse-to-fine argmax refinement
// over predicted mean fields, morphological local-maxima detection for
// candidate positions, and uncertainty-based weighting.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mgprl/geometry.hpp"
#include "mgprl/mogp.hpp"

namespace mgprl {

struct HierarchyConfig {
    int levels = 4;                // V
    GridSpec coarsest_grid;        // B_1
    int refinement_factor = 2;     // cell size divider per level
    int neighborhood_radius = 1;   // r; Omega is the (2r+1)^2 cell square

    void validate() const;
};

struct WeightingConfig {
    double epsilon = 1e-3;  // weight floor
    double alpha = 1.5;     // hierarchical priority, >= 1
    // Scale the local uncertainty by the number of detected maxima. Off
    // switches the prefactor to 1 for ablation runs.
    bool scale_by_maxima_count = true;

    void validate() const;
};

struct ApEstimate {
    enum class Kind { hierarchical, local_maximum };

    std::string ap_id;
    Vec2 position;
    double weight = 1.0;          // in (0, 1]
    Kind kind = Kind::hierarchical;
    double local_uncertainty = 0.0;  // U value, dB
};

// Evaluates the model's posterior mean on a grid; injectable so synthetic
// fields can drive the hierarchy in tests.
using MeanFieldFn = std::function<ScalarField(const GridSpec&)>;

// Coarse-to-fine argmax: predict the mean on B_v, pick the maximum cell
// (ties resolve to the lowest (row, col) index), recenter a 3x3-cell region
// on it at refinement_factor times finer resolution, repeat for V levels.
Vec2 hierarchical_argmax(const MeanFieldFn& predict_mean, const HierarchyConfig& cfg);
Vec2 hierarchical_ap_position(const MogpModel& model, const std::string& ap_id,
                              const HierarchyConfig& cfg);

// Cells whose mean equals the maximum over their Omega neighborhood, reduced
// to one representative per connected equal-valued plateau, filtered to
// within rssi_closeness dB of the field maximum. The global argmax cell (the
// hierarchical pick at this level) is excluded; candidates landing in that
// cell are deduplicated away.
std::vector<Vec2> detect_local_maxima(const ScalarField& mean_field, const HierarchyConfig& cfg,
                                      double rssi_closeness_db);

// Average posterior standard deviation over the Omega neighborhood of cell
// (ci, cj), scaled by the detected-maxima count L.
double local_uncertainty(const ScalarField& var_field, int ci, int cj, int maxima_count,
                         const HierarchyConfig& cfg);

// Weights the hierarchical estimate and every candidate from the local
// uncertainty at its cell: candidates get max{eps, 1/(1+U)}, the hierarchical
// estimate gets the alpha-boosted variant; both clamp to 1 so weights read as
// relative confidences. Hierarchical estimate comes first in the result.
std::vector<ApEstimate> weigh_candidates(const std::string& ap_id, const Vec2& hierarchical,
                                         const std::vector<Vec2>& candidates,
                                         const ScalarField& var_field, const HierarchyConfig& hcfg,
                                         const WeightingConfig& wcfg);

}  // namespace mgprl
