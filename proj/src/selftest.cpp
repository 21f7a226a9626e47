#include "mgprl/selftest.hpp"

#include <cmath>
#include <sstream>

#include "mgprl/align.hpp"
#include "mgprl/aploc.hpp"
#include "mgprl/mogp.hpp"
#include "mgprl/reference_gp.hpp"
#include "mgprl/rng.hpp"

namespace mgprl {

namespace {

MogpModel random_small_model(Rng& rng, int gamma, int m) {
    std::vector<std::string> ap_ids;
    for (int o = 0; o < m; ++o) ap_ids.push_back("ap" + std::to_string(o + 1));
    std::vector<RssiSample> samples;
    for (int i = 0; i < gamma; ++i) {
        const Vec2 x{rng.uniform(0.0, 8.0), rng.uniform(0.0, 8.0)};
        for (int o = 0; o < m; ++o)
            samples.push_back({x, ap_ids[static_cast<size_t>(o)],
                               -45.0 + 6.0 * std::sin(0.7 * x.x + o) + rng.gaussian(0.0, 1.5)});
    }
    FitOptions opts;
    opts.restarts = 0;  // heuristic hyperparameters; the oracle check needs no optimum
    MogpModel model = fit(samples, ap_ids, opts);
    SeKernelParams kernel{rng.uniform(0.5, 6.0), rng.uniform(0.8, 3.0)};
    Coregionalization coreg;
    coreg.factor.resize(m, 1);
    for (int o = 0; o < m; ++o) coreg.factor(o, 0) = rng.uniform(0.5, 2.5);
    coreg.diag = Eigen::VectorXd::Constant(m, rng.uniform(0.05, 0.5));
    return with_hyperparameters(model, kernel, coreg, rng.uniform(0.05, 0.8));
}

SelftestEntry gp_oracle_suite(FaultInjection fault) {
    SelftestEntry entry{"dense-gp-oracle", true, ""};
    Rng rng(20240001);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        const int gamma = 4 + static_cast<int>(rng.uniform() * 10);
        const int m = 2 + static_cast<int>(rng.uniform() * 3);
        const MogpModel model = random_small_model(rng, gamma, m);
        const auto problem = reference::problem_from_model(model);

        const double lml = log_marginal_likelihood(model);
        const double lml_ref = reference::dense_log_marginal_likelihood(problem);
        worst = std::max(worst, std::abs(lml - lml_ref));

        for (int q = 0; q < 5; ++q) {
            const Vec2 query{rng.uniform(-1.0, 9.0), rng.uniform(-1.0, 9.0)};
            const int out = static_cast<int>(rng.uniform() * m);
            std::vector<double> mean, var;
            predict(model, std::vector<Vec2>{query}, model.outputs()[static_cast<size_t>(out)],
                    mean, var);
            double mean_ref = 0.0, var_ref = 0.0;
            reference::dense_predict(problem, query, out, mean_ref, var_ref);
            double got_mean = mean[0];
            if (fault == FaultInjection::gp_mean_bias) got_mean += 1e-3;
            worst = std::max(worst, std::abs(got_mean - mean_ref));
            worst = std::max(worst, std::abs(var[0] - var_ref));
        }
    }
    std::ostringstream detail;
    detail << "max |impl - dense| = " << worst;
    entry.detail = detail.str();
    entry.passed = worst < 1e-6;
    return entry;
}

SelftestEntry alignment_suite(FaultInjection fault) {
    SelftestEntry entry{"alignment-recovery", true, ""};
    Rng rng(20240002);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const int npts = 3 + static_cast<int>(rng.uniform() * 6);
        const Transform2D truth{rng.uniform(-M_PI, M_PI),
                                {rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)}};
        std::vector<WeightedPoint> src, dst;
        for (int k = 0; k < npts; ++k) {
            const Vec2 p{rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0)};
            const double w = rng.uniform(0.2, 1.0);
            src.push_back({p, w});
            dst.push_back({apply(truth, p), w});
        }
        const auto res = weighted_rigid_align(src, dst);
        double rot_err = std::abs(normalize_angle(res.transform.rotation - truth.rotation));
        if (fault == FaultInjection::align_rotation_bias) rot_err += 1e-3;
        const double trans_err = (res.transform.translation - truth.translation).norm();
        worst = std::max({worst, rot_err, trans_err});
    }
    std::ostringstream detail;
    detail << "max rotation/translation error = " << worst;
    entry.detail = detail.str();
    entry.passed = worst < 1e-9;
    return entry;
}

SelftestEntry maxima_suite(FaultInjection fault) {
    SelftestEntry entry{"maxima-detection", true, ""};
    // Two well-separated equal Gaussian bumps: the weaker becomes the
    // candidate, the stronger is the hierarchical pick.
    const GridSpec grid({0.0, 0.0}, 1.0, 21, 21);
    ScalarField field(grid);
    const Vec2 peak_a{5.0, 10.0}, peak_b{15.0, 10.0};
    for (int j = 0; j < grid.height; ++j) {
        for (int i = 0; i < grid.width; ++i) {
            const Vec2 c = grid_cell_center(grid, i, j);
            const double da = (c - peak_a).squared_norm(), db = (c - peak_b).squared_norm();
            field.at(i, j) = 10.0 * std::exp(-da / 8.0) + 9.0 * std::exp(-db / 8.0);
        }
    }
    HierarchyConfig cfg;
    cfg.coarsest_grid = grid;
    auto maxima = detect_local_maxima(field, cfg, 20.0);
    if (fault == FaultInjection::maxima_drop && !maxima.empty()) maxima.pop_back();

    std::ostringstream detail;
    detail << "detected " << maxima.size() << " candidate(s)";
    entry.detail = detail.str();
    entry.passed = maxima.size() == 1 && distance(maxima[0], peak_b) < 1.0;
    return entry;
}

}  // namespace

FaultInjection fault_from_name(const std::string& name) {
    if (name.empty() || name == "none") return FaultInjection::none;
    if (name == "gp_mean_bias") return FaultInjection::gp_mean_bias;
    if (name == "align_rotation_bias") return FaultInjection::align_rotation_bias;
    if (name == "maxima_drop") return FaultInjection::maxima_drop;
    throw std::invalid_argument("unknown fault injection '" + name + "'");
}

bool SelftestReport::all_passed() const {
    for (const auto& e : entries)
        if (!e.passed) return false;
    return true;
}

SelftestReport run_selftest(FaultInjection fault) {
    SelftestReport report;
    report.entries.push_back(gp_oracle_suite(fault));
    report.entries.push_back(alignment_suite(fault));
    report.entries.push_back(maxima_suite(fault));
    return report;
}

}  // namespace mgprl
