// Ground-truth RSSI world synthesis: log-distance path loss plus a frozen
// correlated shadowing field per AP, small-scale fading and measurement noise
// drawn per query.

#pragma once

#include <string>
#include <vector>

#include "mgprl/geometry.hpp"
#include "mgprl/rng.hpp"

namespace mgprl {

struct PathLossParams {
    double ref_power_dbm = -20.0;      // received power at the reference distance
    double ref_distance = 1.0;         // meters
    double exponent = 3.0;             // in [2, 4]
    double shadowing_sigma = 6.0;      // dB, large-scale correlated component
    double shadowing_corr_length = 3.0;  // meters, SE correlation length of shadowing
    double fading_sigma = 1.0;         // dB, small-scale i.i.d. component
    // Distance floor guarding the log singularity when a robot stands on an
    // AP. A floor at ref_distance itself flattens a disk of radius d0 around
    // the AP and biases the field maximum by ~d0, so the default sits well
    // inside the reference distance.
    double clamp_distance_fraction = 0.25;  // floor = fraction * ref_distance

    double clamp_distance() const { return clamp_distance_fraction * ref_distance; }
    void validate() const;
};

struct RssiSample {
    Vec2 location;
    std::string ap_id;
    double value_dbm = 0.0;
};

// Zero-mean Gaussian random field with squared-exponential spatial
// correlation at the given length scale, realized once on the grid.
// Off-grid queries interpolate bilinearly.
ScalarField realize_shadowing(const GridSpec& grid, double sigma, double corr_length, Rng& rng);

struct ApGroundTruth {
    std::string ap_id;
    Vec2 position;
    PathLossParams params;
    ScalarField shadowing;  // frozen large-scale realization, empty when sigma == 0

    double shadowing_at(const Vec2& x) const;
};

// Large-scale mean RSSI at x: path loss plus the frozen shadowing component.
// Distance is clamped below at ref_distance, so the value plateaus on top of
// the AP instead of blowing up.
double mean_rssi(const ApGroundTruth& ap, const Vec2& x);

// One noisy measurement: mean_rssi plus per-query fading plus measurement
// noise at the requested level. Deterministic given the stream state.
RssiSample sample_measurement(const ApGroundTruth& ap, const Vec2& x, double noise_sigma, Rng& rng);

// A simulated environment: bounds, grid resolution, APs with frozen
// shadowing realizations.
struct World {
    Vec2 min_corner;
    Vec2 max_corner;
    double grid_cell_size = 0.5;
    std::vector<ApGroundTruth> aps;
    uint64_t seed = 0;

    GridSpec grid() const;
    const ApGroundTruth& ap(const std::string& id) const;
    bool contains(const Vec2& p) const;
};

// World description file (versioned JSON, format "mgprl-world/1").
World load_world(const std::string& path);
World world_from_json_text(const std::string& text);
std::string world_to_json_text(const World& w);
void save_world(const World& w, const std::string& path);

// Builds the world from parsed parameters: realizes one shadowing field per
// AP from the world seed.
World build_world(Vec2 min_corner, Vec2 max_corner, double grid_cell_size,
                  const std::vector<std::pair<std::string, Vec2>>& ap_list,
                  const PathLossParams& params, uint64_t seed);

}  // namespace mgprl
