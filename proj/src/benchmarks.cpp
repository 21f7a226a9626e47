#include "mgprl/benchmarks.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "mgprl/align.hpp"
#include "mgprl/mogp.hpp"
#include "mgprl/rng.hpp"

namespace mgprl {

namespace {

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

// Smooth synthetic multi-output data: shared latent bumps plus per-output
// offsets, sampled at uniform random locations.
std::vector<RssiSample> synthetic_samples(int gamma, int outputs, Rng& rng,
                                          std::vector<std::string>& ap_ids) {
    ap_ids.clear();
    for (int o = 0; o < outputs; ++o) ap_ids.push_back("ap" + std::to_string(o + 1));
    std::vector<RssiSample> samples;
    samples.reserve(static_cast<size_t>(gamma) * outputs);
    for (int i = 0; i < gamma; ++i) {
        const Vec2 x{rng.uniform(0.0, 10.0), rng.uniform(0.0, 10.0)};
        const double latent = 8.0 * std::sin(0.6 * x.x) * std::cos(0.5 * x.y);
        for (int o = 0; o < outputs; ++o) {
            const double v = -40.0 - 3.0 * o + (1.0 + 0.1 * o) * latent + rng.gaussian(0.0, 1.0);
            samples.push_back({x, ap_ids[static_cast<size_t>(o)], v});
        }
    }
    return samples;
}

}  // namespace

std::vector<FitScalingRow> fit_scaling_benchmark(const std::vector<int>& gammas, int outputs,
                                                 int opt_iters, uint64_t seed) {
    std::vector<FitScalingRow> rows;
    for (int gamma : gammas) {
        Rng rng(derive_seed(seed, "fit-scaling", static_cast<uint64_t>(gamma)));
        std::vector<std::string> ap_ids;
        const auto samples = synthetic_samples(gamma, outputs, rng, ap_ids);

        FitOptions opts;
        opts.restarts = 1;
        opts.max_iters = opt_iters;
        opts.seed = seed;

        FitScalingRow row;
        row.gamma = gamma;
        row.outputs = outputs;

        double t0 = now_seconds();
        const MogpModel joint = fit(samples, ap_ids, opts);
        row.joint_seconds = now_seconds() - t0;
        (void)joint;

        t0 = now_seconds();
        for (int o = 0; o < outputs; ++o) {
            std::vector<RssiSample> single;
            for (const auto& s : samples)
                if (s.ap_id == ap_ids[static_cast<size_t>(o)]) single.push_back(s);
            const MogpModel solo = fit(single, {ap_ids[static_cast<size_t>(o)]}, opts);
            (void)solo;
        }
        row.independent_seconds = now_seconds() - t0;
        row.ratio = row.joint_seconds / row.independent_seconds;
        rows.push_back(row);
    }
    return rows;
}

std::string fit_scaling_csv(const std::vector<FitScalingRow>& rows) {
    std::ostringstream csv;
    csv << "gamma,outputs,joint_fit_s,independent_fits_s,ratio\n";
    for (const auto& r : rows)
        csv << r.gamma << ',' << r.outputs << ',' << r.joint_seconds << ','
            << r.independent_seconds << ',' << r.ratio << '\n';
    return csv.str();
}

std::vector<AlignScalingRow> align_scaling_benchmark(const std::vector<int>& ap_counts,
                                                     int candidates_per_ap, int repeats,
                                                     uint64_t seed) {
    std::vector<AlignScalingRow> rows;
    for (int aps : ap_counts) {
        Rng rng(derive_seed(seed, "align-scaling", static_cast<uint64_t>(aps)));
        const Transform2D truth{0.7, {3.0, -2.0}};
        RobotBeliefMsg a, b;
        a.robot_id = "a";
        b.robot_id = "b";
        for (int k = 0; k < aps; ++k) {
            const std::string ap = "ap" + std::to_string(k + 1);
            const Vec2 pos{rng.uniform(0.0, 20.0), rng.uniform(0.0, 20.0)};
            a.estimates.push_back({ap, pos, 1.0, ApEstimate::Kind::hierarchical, 0.1});
            b.estimates.push_back(
                {ap, apply(truth.inverse(), pos), 1.0, ApEstimate::Kind::hierarchical, 0.1});
            for (int c = 0; c < candidates_per_ap; ++c) {
                const Vec2 off{rng.gaussian(0.0, 2.0), rng.gaussian(0.0, 2.0)};
                a.estimates.push_back(
                    {ap, pos + off, 0.5, ApEstimate::Kind::local_maximum, 1.0});
                b.estimates.push_back({ap, apply(truth.inverse(), pos + off), 0.5,
                                       ApEstimate::Kind::local_maximum, 1.0});
            }
        }
        AlignmentConfig cfg;
        cfg.lambda = 0.05;
        cfg.max_candidate_combinations = 512;

        const double t0 = now_seconds();
        for (int rep = 0; rep < repeats; ++rep) {
            std::vector<Vec2> pts;
            for (const auto& e : a.estimates) pts.push_back(e.position);
            (void)convex_hull(pts);
            (void)align_pair(a, b, cfg);
        }
        AlignScalingRow row;
        row.total_estimates = static_cast<int>(a.estimates.size() + b.estimates.size());
        row.seconds = (now_seconds() - t0) / repeats;
        rows.push_back(row);
    }
    return rows;
}

std::string align_scaling_csv(const std::vector<AlignScalingRow>& rows) {
    std::ostringstream csv;
    csv << "total_estimates,seconds\n";
    for (const auto& r : rows) csv << r.total_estimates << ',' << r.seconds << '\n';
    return csv.str();
}

}  // namespace mgprl
