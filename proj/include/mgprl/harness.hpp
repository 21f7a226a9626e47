// Multi-robot simulation episodes: seeded random walks, incremental MOGP
// updates, per-cycle AP estimation and pairwise alignment, metrics.
//
// Robots only ever see RssiSamples (in their own frame) and each other's
// belief messages; ground truth stays on the harness side. Robot updates
// within a cycle are independent and run in parallel, with the cycle barrier
// as the only synchronization point.

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mgprl/align.hpp"
#include "mgprl/aploc.hpp"
#include "mgprl/mogp.hpp"
#include "mgprl/rfsim.hpp"

namespace mgprl {

struct EpisodeConfig {
    std::string world_path;            // ignored when world is set
    std::optional<World> world;        // resolved world (inline or loaded)
    std::vector<Pose2D> robot_starts;  // world frame, n >= 2

    int initial_samples = 15;   // waypoints sampled before the first fit
    int samples_per_cycle = 1;  // waypoints per cycle
    int cycles = 50;
    double noise_level = 0.0;  // dB, measurement noise
    double ap_dropout = 0.0;   // probability an AP is missed at a waypoint

    int hierarchy_levels = 4;
    double coarse_cell = 0.5;  // m, B_1 resolution
    int refinement_factor = 2;
    int neighborhood_radius = 1;
    double bounds_padding = 1.0;  // m added around a robot's sampled region for B_1
    // A B_1 cell enters the argmax search only when a sample lies within this
    // radius; the GP extrapolation overshoots into never-visited cells and
    // would otherwise win the argmax there.
    double coverage_radius = 1.25;  // m

    WeightingConfig weighting;
    double rssi_closeness_db = 6.0;
    AlignmentConfig alignment;
    FitOptions fit;

    double walk_step = 0.5;            // m
    double walk_max_turn = M_PI / 4.0;  // radians per step
    int snapshot_stride = 0;           // extra field snapshots every k cycles; 0 = final only

    uint64_t master_seed = 1;

    void validate() const;
};

struct MetricsRecord {
    int cycle = 0;
    std::string robot_id;
    int samples_per_ap = 0;
    double ale_ap = 0.0;             // m, mean over APs (alignment-corrected picks)
    double ale_r = 0.0;              // m, mean over accepted alignments; NaN if none
    double field_rmse_db = 0.0;      // mean over APs on the world grid
    double mean_uncertainty_db = 0.0;
    double accept_rate = 0.0;        // accepted / (n - 1)
    double fit_time_s = 0.0;
    double predict_time_s = 0.0;
    std::string status = "ok";
};

struct EpisodeSummary {
    double final_ale_ap = 0.0;
    double final_ale_r = 0.0;
    double final_rmse_db = 0.0;
    double final_uncertainty_db = 0.0;
    double final_accept_rate = 0.0;
    int samples_per_robot = 0;
};

struct EpisodeResult {
    std::vector<MetricsRecord> records;  // cycles x robots rows
    EpisodeSummary summary;
    std::string metrics_csv;  // deterministic given master_seed
    std::string timing_csv;   // wall times, not covered by determinism
};

// Mean Euclidean distance between identity-matched estimates and truth.
double compute_ale(const std::vector<Vec2>& estimates, const std::vector<Vec2>& truth);

// Root-mean-square difference between a predicted field and the noiseless
// ground-truth mean evaluated at each cell center.
double compute_field_rmse(const ScalarField& predicted,
                          const std::function<double(const Vec2&)>& truth_fn);

// Runs one episode. When out_dir is non-empty, writes the artifact bundle:
// metrics.csv, timing.csv, summary.json, per-robot belief logs, alignment log
// and field snapshots.
EpisodeResult run_episode(const EpisodeConfig& cfg, const std::string& out_dir = "");

// Episode config file ("mgprl-episode/1"). The world entry may be a path
// (resolved relative to the config file) or an inline world object.
EpisodeConfig load_episode_config(const std::string& path);
EpisodeConfig episode_config_from_json_text(const std::string& text, const std::string& base_dir);
// Fully resolved config (world inlined) for manifests and replay.
std::string episode_config_to_json_text(const EpisodeConfig& cfg);

// Applies one "dotted.key=value" override onto raw config JSON text; throws
// std::invalid_argument naming the key when the path does not exist.
std::string apply_config_override(const std::string& config_text, const std::string& key_eq_value);

}  // namespace mgprl
