#include "mgprl/align.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <map>
#include <set>

using json = nlohmann::ordered_json;

namespace mgprl {

void AlignmentConfig::validate() const {
    if (!(lambda > 0.0)) throw std::invalid_argument("alignment.lambda must be > 0");
    if (max_candidate_combinations < 1)
        throw std::invalid_argument("alignment.max_candidate_combinations must be >= 1");
}

std::vector<Vec2> convex_hull(std::vector<Vec2> points) {
    if (points.empty()) throw std::invalid_argument("convex_hull: needs at least one point");
    std::sort(points.begin(), points.end(), [](const Vec2& a, const Vec2& b) {
        return a.x < b.x || (a.x == b.x && a.y < b.y);
    });
    points.erase(std::unique(points.begin(), points.end(),
                             [](const Vec2& a, const Vec2& b) { return a.x == b.x && a.y == b.y; }),
                 points.end());
    const size_t n = points.size();
    if (n <= 2) return points;

    // Monotone chain; <= 0 drops collinear interior points, so a fully
    // collinear input collapses to its two endpoints.
    std::vector<Vec2> hull(2 * n);
    size_t k = 0;
    for (size_t i = 0; i < n; ++i) {
        while (k >= 2 && (hull[k - 1] - hull[k - 2]).cross(points[i] - hull[k - 2]) <= 0.0) --k;
        hull[k++] = points[i];
    }
    const size_t lower = k + 1;
    for (size_t i = n - 1; i-- > 0;) {
        while (k >= lower && (hull[k - 1] - hull[k - 2]).cross(points[i] - hull[k - 2]) <= 0.0) --k;
        hull[k++] = points[i];
    }
    hull.resize(k - 1);  // last point repeats the first
    return hull;
}

RigidAlignResult weighted_rigid_align(std::span<const WeightedPoint> src,
                                      std::span<const WeightedPoint> dst,
                                      bool allow_reflection) {
    if (src.size() != dst.size())
        throw std::invalid_argument("weighted_rigid_align: correspondence lists differ in length");
    if (src.empty()) throw std::invalid_argument("weighted_rigid_align: empty correspondence set");

    double wsum = 0.0;
    for (size_t i = 0; i < src.size(); ++i) {
        const double w = src[i].w * dst[i].w;
        if (w < 0.0) throw std::invalid_argument("weighted_rigid_align: negative weight");
        wsum += w;
    }
    if (!(wsum > 0.0)) throw std::invalid_argument("weighted_rigid_align: total weight is zero");

    Vec2 cs{0.0, 0.0}, cd{0.0, 0.0};
    for (size_t i = 0; i < src.size(); ++i) {
        const double w = src[i].w * dst[i].w;
        cs = cs + src[i].p * w;
        cd = cd + dst[i].p * w;
    }
    cs = cs * (1.0 / wsum);
    cd = cd * (1.0 / wsum);

    RigidAlignResult res;
    // Count distinct source points; with fewer than 2 the rotation is
    // unobservable and only the translation is recovered.
    {
        std::vector<Vec2> uniq;
        for (const auto& s : src) {
            bool seen = false;
            for (const auto& u : uniq)
                if ((u - s.p).norm() < 1e-12) seen = true;
            if (!seen) uniq.push_back(s.p);
        }
        if (uniq.size() < 2) {
            res.degenerate = true;
            res.transform = Transform2D{0.0, cd - cs};
            res.weighted_error = 0.0;
            for (size_t i = 0; i < src.size(); ++i) {
                const double w = src[i].w * dst[i].w;
                res.weighted_error += w * (dst[i].p - apply(res.transform, src[i].p)).squared_norm();
            }
            return res;
        }
    }

    Eigen::Matrix2d H = Eigen::Matrix2d::Zero();
    for (size_t i = 0; i < src.size(); ++i) {
        const double w = src[i].w * dst[i].w;
        const Vec2 s = src[i].p - cs, d = dst[i].p - cd;
        H(0, 0) += w * s.x * d.x;
        H(0, 1) += w * s.x * d.y;
        H(1, 0) += w * s.y * d.x;
        H(1, 1) += w * s.y * d.y;
    }
    Eigen::JacobiSVD<Eigen::Matrix2d> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix2d R = svd.matrixV() * svd.matrixU().transpose();
    if (!allow_reflection && R.determinant() < 0.0) {
        Eigen::Matrix2d flip = Eigen::Matrix2d::Identity();
        flip(1, 1) = -1.0;
        R = svd.matrixV() * flip * svd.matrixU().transpose();
    }

    const double theta = std::atan2(R(1, 0), R(0, 0));
    const Vec2 rcs{R(0, 0) * cs.x + R(0, 1) * cs.y, R(1, 0) * cs.x + R(1, 1) * cs.y};
    res.transform = Transform2D{theta, cd - rcs};
    res.weighted_error = 0.0;
    for (size_t i = 0; i < src.size(); ++i) {
        const double w = src[i].w * dst[i].w;
        res.weighted_error += w * (dst[i].p - apply(res.transform, src[i].p)).squared_norm();
    }
    return res;
}

namespace {

// Per-AP option lists into the estimates vector, hierarchical entries first.
std::map<std::string, std::vector<int>> group_by_ap(const RobotBeliefMsg& msg,
                                                    bool hierarchical_only) {
    std::map<std::string, std::vector<int>> groups;
    for (int i = 0; i < static_cast<int>(msg.estimates.size()); ++i)
        groups[msg.estimates[static_cast<size_t>(i)].ap_id].push_back(i);
    for (auto& [ap, idxs] : groups) {
        std::stable_sort(idxs.begin(), idxs.end(), [&](int a, int b) {
            const bool ha = msg.estimates[static_cast<size_t>(a)].kind == ApEstimate::Kind::hierarchical;
            const bool hb = msg.estimates[static_cast<size_t>(b)].kind == ApEstimate::Kind::hierarchical;
            return ha > hb;
        });
        if (hierarchical_only) idxs.resize(1);
    }
    return groups;
}

bool points_collinear(const std::vector<Vec2>& pts) {
    if (pts.size() < 3) return true;
    std::vector<Vec2> unique_pts;
    for (const auto& p : pts) {
        bool seen = false;
        for (const auto& u : unique_pts)
            if ((u - p).norm() < 1e-12) seen = true;
        if (!seen) unique_pts.push_back(p);
    }
    return convex_hull(unique_pts).size() < 3;
}

struct PairingProblem {
    std::vector<std::string> shared;               // sorted AP ids
    std::vector<std::vector<int>> options_a;       // per shared AP
    std::vector<std::vector<int>> options_b;
    const RobotBeliefMsg* a = nullptr;
    const RobotBeliefMsg* b = nullptr;
};

double pairing_error(const PairingProblem& prob, const std::vector<int>& choice,
                     RigidAlignResult& out, bool allow_reflection) {
    std::vector<WeightedPoint> src, dst;
    src.reserve(prob.shared.size());
    dst.reserve(prob.shared.size());
    for (size_t k = 0; k < prob.shared.size(); ++k) {
        const int flat = choice[k];
        const int na = static_cast<int>(prob.options_a[k].size());
        const auto& ea = prob.a->estimates[static_cast<size_t>(prob.options_a[k][static_cast<size_t>(flat % na)])];
        const auto& eb = prob.b->estimates[static_cast<size_t>(prob.options_b[k][static_cast<size_t>(flat / na)])];
        dst.push_back({ea.position, ea.weight});
        src.push_back({eb.position, eb.weight});
    }
    out = weighted_rigid_align(src, dst, allow_reflection);
    return out.weighted_error;
}

}  // namespace

HullAlignment align_pair(const RobotBeliefMsg& a, const RobotBeliefMsg& b,
                         const AlignmentConfig& cfg) {
    cfg.validate();
    const auto groups_a = group_by_ap(a, cfg.hierarchical_only);
    const auto groups_b = group_by_ap(b, cfg.hierarchical_only);

    PairingProblem prob;
    prob.a = &a;
    prob.b = &b;
    for (const auto& [ap, idxs] : groups_a) {
        const auto it = groups_b.find(ap);
        if (it == groups_b.end()) continue;
        prob.shared.push_back(ap);
        prob.options_a.push_back(idxs);
        prob.options_b.push_back(it->second);
    }
    if (prob.shared.size() < 3)
        throw InsufficientOverlapError("align_pair: " + std::to_string(prob.shared.size()) +
                                       " shared APs between '" + a.robot_id + "' and '" +
                                       b.robot_id + "', need at least 3");

    const size_t naps = prob.shared.size();
    std::vector<int> radix(naps);
    double total = 1.0;
    for (size_t k = 0; k < naps; ++k) {
        radix[k] = static_cast<int>(prob.options_a[k].size() * prob.options_b[k].size());
        total *= radix[k];
    }

    std::vector<int> best_choice(naps, 0);
    RigidAlignResult best_res;
    double best_err = std::numeric_limits<double>::infinity();

    if (total <= static_cast<double>(cfg.max_candidate_combinations)) {
        // Exhaustive mixed-radix enumeration; all-hierarchical comes first.
        std::vector<int> choice(naps, 0);
        while (true) {
            RigidAlignResult res;
            const double err = pairing_error(prob, choice, res, cfg.reflection_allowed);
            if (err < best_err) {
                best_err = err;
                best_res = res;
                best_choice = choice;
            }
            size_t k = 0;
            while (k < naps && ++choice[k] == radix[k]) choice[k++] = 0;
            if (k == naps) break;
        }
    } else {
        // Greedy: start from the hierarchical picks, repeatedly apply the
        // single best per-AP swap until no improvement.
        std::vector<int> choice(naps, 0);
        RigidAlignResult res;
        best_err = pairing_error(prob, choice, res, cfg.reflection_allowed);
        best_res = res;
        best_choice = choice;
        bool improved = true;
        int rounds = 0;
        while (improved && rounds++ < 10 * static_cast<int>(naps)) {
            improved = false;
            size_t swap_ap = 0;
            int swap_opt = 0;
            double swap_err = best_err;
            RigidAlignResult swap_res;
            for (size_t k = 0; k < naps; ++k) {
                for (int opt = 0; opt < radix[k]; ++opt) {
                    if (opt == best_choice[k]) continue;
                    std::vector<int> cand = best_choice;
                    cand[k] = opt;
                    RigidAlignResult r;
                    const double err = pairing_error(prob, cand, r, cfg.reflection_allowed);
                    if (err < swap_err) {
                        swap_err = err;
                        swap_res = r;
                        swap_ap = k;
                        swap_opt = opt;
                        improved = true;
                    }
                }
            }
            if (improved) {
                best_choice[swap_ap] = swap_opt;
                best_err = swap_err;
                best_res = swap_res;
            }
        }
    }

    HullAlignment out;
    out.robot_a = a.robot_id;
    out.robot_b = b.robot_id;
    out.transform = best_res.transform;
    out.weighted_error = cfg.normalize_error_by_count
                             ? best_err / static_cast<double>(naps)
                             : best_err;
    out.accepted = out.weighted_error < cfg.lambda;

    std::vector<Vec2> pts_a, pts_b;
    for (size_t k = 0; k < naps; ++k) {
        const int flat = best_choice[k];
        const int na = static_cast<int>(prob.options_a[k].size());
        const int ia = prob.options_a[k][static_cast<size_t>(flat % na)];
        const int ib = prob.options_b[k][static_cast<size_t>(flat / na)];
        out.correspondence.push_back({prob.shared[k], ia, ib});
        pts_a.push_back(a.estimates[static_cast<size_t>(ia)].position);
        pts_b.push_back(b.estimates[static_cast<size_t>(ib)].position);
    }
    out.degenerate = best_res.degenerate || points_collinear(pts_a) || points_collinear(pts_b);
    return out;
}

Vec2 relative_position(const HullAlignment& alignment) {
    return apply(alignment.transform, Vec2{0.0, 0.0});
}

double symmetric_consistency(const HullAlignment& ab, const HullAlignment& ba) {
    if (!ab.accepted || !ba.accepted)
        throw std::invalid_argument("symmetric_consistency: both alignments must be accepted");
    return deviation_from_identity(compose(ab.transform, ba.transform));
}

std::string belief_to_json_text(const RobotBeliefMsg& msg) {
    json j;
    j["format"] = "mgprl-belief/1";
    j["robot_id"] = msg.robot_id;
    j["timestamp"] = msg.timestamp;
    j["pose"] = {{"x", msg.self_position.x}, {"y", msg.self_position.y}, {"yaw", msg.self_position.yaw}};
    json ests = json::array();
    for (const auto& e : msg.estimates) {
        ests.push_back({{"ap_id", e.ap_id},
                        {"kind", e.kind == ApEstimate::Kind::hierarchical ? "hierarchical"
                                                                          : "local_maximum"},
                        {"x", e.position.x},
                        {"y", e.position.y},
                        {"weight", e.weight},
                        {"uncertainty", e.local_uncertainty}});
    }
    j["estimates"] = std::move(ests);
    return j.dump() + "\n";
}

RobotBeliefMsg belief_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw std::invalid_argument(std::string("belief message: invalid JSON: ") + e.what());
    }
    if (!j.contains("format") || j["format"] != "mgprl-belief/1")
        throw std::invalid_argument("belief message: missing or unsupported 'format'");
    RobotBeliefMsg msg;
    msg.robot_id = j["robot_id"].get<std::string>();
    msg.timestamp = j["timestamp"].get<int>();
    msg.self_position = Pose2D(j["pose"]["x"].get<double>(), j["pose"]["y"].get<double>(),
                               j["pose"]["yaw"].get<double>());
    for (const auto& e : j["estimates"]) {
        ApEstimate est;
        est.ap_id = e["ap_id"].get<std::string>();
        est.kind = e["kind"].get<std::string>() == "hierarchical"
                       ? ApEstimate::Kind::hierarchical
                       : ApEstimate::Kind::local_maximum;
        est.position = {e["x"].get<double>(), e["y"].get<double>()};
        est.weight = e["weight"].get<double>();
        est.local_uncertainty = e["uncertainty"].get<double>();
        msg.estimates.push_back(std::move(est));
    }
    return msg;
}

}  // namespace mgprl
