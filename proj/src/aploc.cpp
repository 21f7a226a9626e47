#include "mgprl/aploc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <stdexcept>

namespace mgprl {

void HierarchyConfig::validate() const {
    if (levels < 1) throw std::invalid_argument("hierarchy.levels must be >= 1");
    if (refinement_factor < 2) throw std::invalid_argument("hierarchy.refinement_factor must be >= 2");
    if (neighborhood_radius < 1)
        throw std::invalid_argument("hierarchy.neighborhood_radius must be >= 1");
}

void WeightingConfig::validate() const {
    if (!(epsilon > 0.0)) throw std::invalid_argument("weighting.epsilon must be > 0");
    if (alpha < 1.0) throw std::invalid_argument("weighting.alpha must be >= 1");
}

Vec2 hierarchical_argmax(const MeanFieldFn& predict_mean, const HierarchyConfig& cfg) {
    cfg.validate();
    GridSpec grid = cfg.coarsest_grid;
    Vec2 estimate;
    for (int level = 1; level <= cfg.levels; ++level) {
        const ScalarField field = predict_mean(grid);
        const auto [i, j] = field.argmax_cell();
        estimate = grid_cell_center(grid, i, j);
        if (level == cfg.levels) break;
        // Refine a 3x3-cell window around the winner.
        const double next_cell = grid.cell_size / cfg.refinement_factor;
        const int cells = 3 * cfg.refinement_factor;
        grid = GridSpec({estimate.x - 1.5 * grid.cell_size, estimate.y - 1.5 * grid.cell_size},
                        next_cell, cells, cells);
    }
    return estimate;
}

Vec2 hierarchical_ap_position(const MogpModel& model, const std::string& ap_id,
                              const HierarchyConfig& cfg) {
    return hierarchical_argmax(
        [&](const GridSpec& grid) {
            ScalarField mean, variance;
            predict_field(model, grid, ap_id, mean, variance);
            return mean;
        },
        cfg);
}

std::vector<Vec2> detect_local_maxima(const ScalarField& mean_field, const HierarchyConfig& cfg,
                                      double rssi_closeness_db) {
    cfg.validate();
    const GridSpec& g = mean_field.grid;
    const int r = cfg.neighborhood_radius;

    // Cells not dominated by anything in their Omega neighborhood.
    std::vector<char> is_max(static_cast<size_t>(g.cell_count()), 0);
    for (int j = 0; j < g.height; ++j) {
        for (int i = 0; i < g.width; ++i) {
            const double v = mean_field.at(i, j);
            bool dominated = false;
            for (int dj = -r; dj <= r && !dominated; ++dj) {
                for (int di = -r; di <= r; ++di) {
                    const int ni = i + di, nj = j + dj;
                    if (!g.in_range(ni, nj)) continue;
                    if (mean_field.at(ni, nj) > v) {
                        dominated = true;
                        break;
                    }
                }
            }
            if (!dominated) is_max[static_cast<size_t>(g.index(i, j))] = 1;
        }
    }

    // Merge marked cells of equal value into 8-connected plateaus and keep
    // the cell nearest the plateau centroid as its representative.
    std::vector<int> component(static_cast<size_t>(g.cell_count()), -1);
    std::vector<Vec2> reps;
    std::vector<double> rep_values;
    int next_component = 0;
    for (int j = 0; j < g.height; ++j) {
        for (int i = 0; i < g.width; ++i) {
            const size_t idx = static_cast<size_t>(g.index(i, j));
            if (!is_max[idx] || component[idx] >= 0) continue;
            const double value = mean_field.at(i, j);
            std::vector<std::pair<int, int>> members;
            std::queue<std::pair<int, int>> frontier;
            frontier.push({i, j});
            component[idx] = next_component;
            while (!frontier.empty()) {
                const auto [ci, cj] = frontier.front();
                frontier.pop();
                members.push_back({ci, cj});
                for (int dj = -1; dj <= 1; ++dj) {
                    for (int di = -1; di <= 1; ++di) {
                        const int ni = ci + di, nj = cj + dj;
                        if (!g.in_range(ni, nj)) continue;
                        const size_t nidx = static_cast<size_t>(g.index(ni, nj));
                        if (!is_max[nidx] || component[nidx] >= 0) continue;
                        if (mean_field.at(ni, nj) != value) continue;
                        component[nidx] = next_component;
                        frontier.push({ni, nj});
                    }
                }
            }
            double mi = 0.0, mj = 0.0;
            for (const auto& [ci, cj] : members) {
                mi += ci;
                mj += cj;
            }
            mi /= static_cast<double>(members.size());
            mj /= static_cast<double>(members.size());
            std::pair<int, int> rep = members.front();
            double best = std::numeric_limits<double>::infinity();
            for (const auto& [ci, cj] : members) {
                const double d = (ci - mi) * (ci - mi) + (cj - mj) * (cj - mj);
                if (d < best || (d == best && g.index(ci, cj) < g.index(rep.first, rep.second))) {
                    best = d;
                    rep = {ci, cj};
                }
            }
            reps.push_back(grid_cell_center(g, rep.first, rep.second));
            rep_values.push_back(value);
            ++next_component;
        }
    }

    // Drop the hierarchical pick's cell and anything not close in strength.
    const auto [gi, gj] = mean_field.argmax_cell();
    const double global_max = mean_field.at(gi, gj);
    std::vector<std::pair<int, Vec2>> kept;  // (linear index, center) for deterministic order
    for (size_t k = 0; k < reps.size(); ++k) {
        const auto [ci, cj] = g.clamped_cell_of(reps[k]);
        if (ci == gi && cj == gj) continue;
        if (rep_values[k] < global_max - rssi_closeness_db) continue;
        kept.push_back({g.index(ci, cj), reps[k]});
    }
    std::sort(kept.begin(), kept.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<Vec2> out;
    out.reserve(kept.size());
    for (const auto& [idx, p] : kept) out.push_back(p);
    return out;
}

double local_uncertainty(const ScalarField& var_field, int ci, int cj, int maxima_count,
                         const HierarchyConfig& cfg) {
    const GridSpec& g = var_field.grid;
    if (!g.in_range(ci, cj)) throw std::out_of_range("local_uncertainty: cell out of range");
    const int r = cfg.neighborhood_radius;
    double sum = 0.0;
    int count = 0;
    for (int dj = -r; dj <= r; ++dj) {
        for (int di = -r; di <= r; ++di) {
            const int ni = ci + di, nj = cj + dj;
            if (!g.in_range(ni, nj)) continue;
            sum += std::sqrt(std::max(var_field.at(ni, nj), 0.0));
            ++count;
        }
    }
    return static_cast<double>(maxima_count) * sum / static_cast<double>(count);
}

std::vector<ApEstimate> weigh_candidates(const std::string& ap_id, const Vec2& hierarchical,
                                         const std::vector<Vec2>& candidates,
                                         const ScalarField& var_field, const HierarchyConfig& hcfg,
                                         const WeightingConfig& wcfg) {
    wcfg.validate();
    // The coarse cell holding the hierarchical estimate is itself always a
    // local maximum, so it counts toward L alongside the candidates.
    const int maxima_count =
        wcfg.scale_by_maxima_count ? static_cast<int>(candidates.size()) + 1 : 1;

    const auto uncertainty_at = [&](const Vec2& p) {
        const auto [ci, cj] = var_field.grid.clamped_cell_of(p);
        return local_uncertainty(var_field, ci, cj, maxima_count, hcfg);
    };

    std::vector<ApEstimate> out;
    out.reserve(candidates.size() + 1);
    {
        const double u = uncertainty_at(hierarchical);
        const double w = std::min(1.0, std::max(wcfg.epsilon, wcfg.alpha / (1.0 + u)));
        out.push_back({ap_id, hierarchical, w, ApEstimate::Kind::hierarchical, u});
    }
    for (const Vec2& c : candidates) {
        const double u = uncertainty_at(c);
        const double w = std::min(1.0, std::max(wcfg.epsilon, 1.0 / (1.0 + u)));
        out.push_back({ap_id, c, w, ApEstimate::Kind::local_maximum, u});
    }
    return out;
}

}  // namespace mgprl
