// Relative localization from weighted convex hulls of AP estimates: per-AP
// candidate correspondence search, weighted SVD rigid alignment, threshold
// acceptance, and the inter-robot belief message the search consumes.

#pragma once

#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgprl/aploc.hpp"
#include "mgprl/geometry.hpp"

namespace mgprl {

struct AlignmentConfig {
    double lambda = 0.05;  // m^2, acceptance gate on the weighted error
    int max_candidate_combinations = 512;
    bool reflection_allowed = false;
    // Divide the summed error by the shared-AP count before gating.
    bool normalize_error_by_count = false;
    // Ablation: restrict the search to hierarchical estimates.
    bool hierarchical_only = false;

    void validate() const;
};

// What one robot broadcasts: its pose plus per-AP estimates (hierarchical
// first within each AP group), all in its own frame.
struct RobotBeliefMsg {
    std::string robot_id;
    int timestamp = 0;
    Pose2D self_position;
    std::vector<ApEstimate> estimates;
};

class InsufficientOverlapError : public std::runtime_error {
public:
    explicit InsufficientOverlapError(const std::string& what) : std::runtime_error(what) {}
};

// Counterclockwise hull vertices, lexicographically smallest vertex first.
// Collinear inputs return the two extreme endpoints; a single point returns
// itself.
std::vector<Vec2> convex_hull(std::vector<Vec2> points);

struct WeightedPoint {
    Vec2 p;
    double w = 1.0;
};

struct RigidAlignResult {
    Transform2D transform;
    double weighted_error = 0.0;
    bool degenerate = false;  // fewer than 2 distinct points, rotation unobservable
};

// Minimizes sum w_k |dst_k - T src_k|^2 over proper rigid transforms:
// weighted centroids, weighted cross-covariance, SVD with determinant
// correction unless reflections are explicitly allowed.
RigidAlignResult weighted_rigid_align(std::span<const WeightedPoint> src,
                                      std::span<const WeightedPoint> dst,
                                      bool allow_reflection = false);

struct CorrespondenceChoice {
    std::string ap_id;
    int index_a = 0;  // index into a.estimates
    int index_b = 0;  // index into b.estimates
};

struct HullAlignment {
    std::string robot_a;
    std::string robot_b;
    Transform2D transform;  // maps b-frame points into a's frame
    double weighted_error = std::numeric_limits<double>::infinity();
    bool accepted = false;
    bool degenerate = false;  // chosen correspondences collinear (or < 2 distinct)
    std::vector<CorrespondenceChoice> correspondence;
};

// Searches per-AP estimate pairings (hierarchical-first order, exhaustive up
// to max_candidate_combinations, then greedy best-swap refinement) for the
// transform minimizing the combined-weight alignment error; accepts iff the
// error beats lambda. Throws InsufficientOverlapError with fewer than 3
// shared APs.
HullAlignment align_pair(const RobotBeliefMsg& a, const RobotBeliefMsg& b,
                         const AlignmentConfig& cfg);

// Position of the neighbor's origin in the aligning robot's frame.
Vec2 relative_position(const HullAlignment& alignment);

// Deviation from identity of T_ab composed with T_ba (translation norm).
// Both alignments must be accepted.
double symmetric_consistency(const HullAlignment& ab, const HullAlignment& ba);

// Wire format (versioned JSON, "mgprl-belief/1", fixed key order so identical
// beliefs serialize to identical bytes).
std::string belief_to_json_text(const RobotBeliefMsg& msg);
RobotBeliefMsg belief_from_json_text(const std::string& text);

}  // namespace mgprl
