#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "mgprl/mogp.hpp"
#include "mgprl/reference_gp.hpp"
#include "mgprl/rfsim.hpp"
#include "mgprl/rng.hpp"

using namespace mgprl;

namespace {

std::vector<std::string> ap_names(int m) {
    std::vector<std::string> out;
    for (int o = 0; o < m; ++o) out.push_back("ap" + std::to_string(o + 1));
    return out;
}

// Random raw data, heuristic fit (no optimization), then explicit random
// hyperparameters so both routes see the same nontrivial model.
MogpModel random_model(Rng& rng, int gamma, int m, bool drop_one = false) {
    const auto ids = ap_names(m);
    std::vector<RssiSample> samples;
    for (int i = 0; i < gamma; ++i) {
        const Vec2 x{rng.uniform(0.0, 8.0), rng.uniform(0.0, 8.0)};
        for (int o = 0; o < m; ++o) {
            if (drop_one && i == 0 && o == 0 && gamma > 1 && m > 1) continue;
            samples.push_back({x, ids[static_cast<size_t>(o)],
                               -50.0 + 8.0 * std::sin(0.5 * x.x + o) + rng.gaussian(0.0, 2.0)});
        }
    }
    FitOptions opts;
    opts.restarts = 0;
    MogpModel model = fit(samples, ids, opts);

    SeKernelParams kernel{rng.uniform(0.5, 5.0), rng.uniform(0.7, 3.0)};
    Coregionalization coreg;
    coreg.factor.resize(m, 1);
    for (int o = 0; o < m; ++o) coreg.factor(o, 0) = rng.uniform(0.4, 2.0);
    coreg.diag = Eigen::VectorXd::Zero(m);
    for (int o = 0; o < m; ++o) coreg.diag(o) = rng.uniform(0.05, 0.6);
    return with_hyperparameters(model, kernel, coreg, rng.uniform(0.05, 0.9));
}

// Draws a single-output GP realization with known hyperparameters.
std::vector<RssiSample> gp_draw(Rng& rng, int n, double sigma_f2, double length_scale,
                                double noise_sigma) {
    Eigen::MatrixXd X(n, 2);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = rng.uniform(0.0, 10.0);
        X(i, 1) = rng.uniform(0.0, 10.0);
    }
    Eigen::MatrixXd K(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double dx = X(i, 0) - X(j, 0), dy = X(i, 1) - X(j, 1);
            K(i, j) = sigma_f2 * std::exp(-(dx * dx + dy * dy) / (2.0 * length_scale * length_scale));
        }
    K.diagonal().array() += 1e-8;
    const Eigen::LLT<Eigen::MatrixXd> llt(K);
    Eigen::VectorXd z(n);
    for (int i = 0; i < n; ++i) z(i) = rng.gaussian();
    const Eigen::VectorXd f = llt.matrixL() * z;
    std::vector<RssiSample> samples;
    for (int i = 0; i < n; ++i)
        samples.push_back({{X(i, 0), X(i, 1)}, "ap1", -50.0 + f(i) + rng.gaussian(0.0, noise_sigma)});
    return samples;
}

}  // namespace

TEST_CASE("SE kernel closed-form values") {
    const SeKernelParams p{2.5, 1.3};
    CHECK(kernel_eval(p, {1.0, 2.0}, {1.0, 2.0}) == doctest::Approx(2.5));

    const SeKernelParams unit{1.0, 1.0};
    CHECK(kernel_eval(unit, {0.0, 0.0}, {1.0, 1.0}) == doctest::Approx(std::exp(-1.0)));
    CHECK(kernel_eval(unit, {0.0, 0.0}, {1e4, 0.0}) == doctest::Approx(0.0));
}

TEST_CASE("one-point likelihood matches the closed form") {
    std::vector<RssiSample> samples = {{{2.0, 3.0}, "ap1", -47.0}};
    FitOptions opts;
    opts.restarts = 0;
    MogpModel model = fit(samples, {"ap1"}, opts);
    SeKernelParams kernel{1.7, 1.0};
    Coregionalization coreg;
    coreg.factor = Eigen::MatrixXd::Constant(1, 1, 1.0);
    coreg.diag = Eigen::VectorXd::Zero(1);
    model = with_hyperparameters(model, kernel, coreg, 0.3);
    // y equals the prior mean, so only the normalization survives.
    const double expected = -0.5 * std::log(2.0 * M_PI * (1.7 + 0.3));
    CHECK(log_marginal_likelihood(model) == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("likelihood and posterior match the dense reference") {
    Rng rng(314);
    double worst_lml = 0.0, worst_post = 0.0;
    for (int trial = 0; trial < 12; ++trial) {
        const int gamma = 3 + static_cast<int>(rng.uniform() * 17);
        const int m = 1 + static_cast<int>(rng.uniform() * 4);
        const bool heterotopic = trial % 3 == 2;
        const MogpModel model = random_model(rng, gamma, m, heterotopic);
        if (heterotopic && gamma > 1 && m > 1) CHECK(!model.isotopic());
        const auto problem = reference::problem_from_model(model);

        worst_lml = std::max(worst_lml, std::abs(log_marginal_likelihood(model) -
                                                 reference::dense_log_marginal_likelihood(problem)));
        for (int q = 0; q < 6; ++q) {
            const Vec2 query{rng.uniform(-1.0, 9.0), rng.uniform(-1.0, 9.0)};
            const int out = static_cast<int>(rng.uniform() * m);
            std::vector<double> mean, var;
            predict(model, std::vector<Vec2>{query}, model.outputs()[static_cast<size_t>(out)],
                    mean, var);
            double mref = 0.0, vref = 0.0;
            reference::dense_predict(problem, query, out, mref, vref);
            worst_post = std::max({worst_post, std::abs(mean[0] - mref), std::abs(var[0] - vref)});
        }
    }
    CHECK(worst_lml < 1e-6);
    CHECK(worst_post < 1e-6);
}

TEST_CASE("analytic gradients match central finite differences") {
    Rng rng(2718);
    for (const bool heterotopic : {false, true}) {
        const MogpModel model = random_model(rng, 9, 3, heterotopic);
        const Eigen::VectorXd theta0 = pack_hyperparameters(model);
        Eigen::VectorXd grad;
        lml_at(model, theta0, &grad);
        for (int i = 0; i < theta0.size(); ++i) {
            const double h = 1e-5 * std::max(1.0, std::abs(theta0(i)));
            Eigen::VectorXd tp = theta0, tm = theta0;
            tp(i) += h;
            tm(i) -= h;
            const double fd = (lml_at(model, tp, nullptr) - lml_at(model, tm, nullptr)) / (2.0 * h);
            CHECK(std::abs(grad(i) - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST_CASE("generative recovery of the length scale") {
    int hits = 0;
    for (int seed = 0; seed < 10; ++seed) {
        Rng rng(1000 + static_cast<uint64_t>(seed));
        const auto samples = gp_draw(rng, 200, 4.0, 2.0, 0.3);
        FitOptions opts;
        opts.restarts = 1;
        opts.max_iters = 80;
        opts.seed = static_cast<uint64_t>(seed);
        const MogpModel model = fit(samples, {"ap1"}, opts);
        const double l = model.kernel().length_scale;
        if (l > 2.0 * 0.7 && l < 2.0 * 1.3) ++hits;
    }
    CHECK(hits == 10);
}

TEST_CASE("perfectly correlated outputs are detected") {
    Rng rng(555);
    std::vector<RssiSample> samples;
    for (int i = 0; i < 60; ++i) {
        const Vec2 x{rng.uniform(0.0, 10.0), rng.uniform(0.0, 10.0)};
        const double v = -50.0 + 7.0 * std::sin(0.6 * x.x) + rng.gaussian(0.0, 0.3);
        samples.push_back({x, "ap1", v});
        samples.push_back({x, "ap2", v});
    }
    FitOptions opts;
    opts.restarts = 2;
    opts.max_iters = 120;
    const MogpModel model = fit(samples, {"ap1", "ap2"}, opts);
    const Eigen::MatrixXd B = model.coreg().matrix();
    const double corr = B(0, 1) / std::sqrt(B(0, 0) * B(1, 1));
    CHECK(corr >= 0.9);
}

TEST_CASE("single sample per output fits without error") {
    std::vector<RssiSample> samples = {{{1.0, 1.0}, "ap1", -40.0},
                                       {{1.0, 1.0}, "ap2", -55.0},
                                       {{1.0, 1.0}, "ap3", -60.0}};
    const MogpModel model = fit(samples, ap_names(3), {});
    std::vector<double> mean, var;
    predict(model, std::vector<Vec2>{{5.0, 5.0}}, "ap2", mean, var);
    // Far from the only sample the posterior reverts to the prior mean.
    CHECK(mean[0] == doctest::Approx(-55.0).epsilon(1e-6));
    CHECK(var[0] > 0.0);
}

TEST_CASE("co-located duplicates are rejected") {
    std::vector<RssiSample> samples = {{{1.0, 1.0}, "ap1", -40.0},
                                       {{1.0, 1.0}, "ap1", -41.0},
                                       {{1.0, 1.0}, "ap2", -55.0}};
    CHECK_THROWS_AS(fit(samples, ap_names(2), {}), std::invalid_argument);
}

TEST_CASE("duplicate observation: per-point surprise stays controlled") {
    Rng rng(808);
    const MogpModel model = random_model(rng, 10, 2);
    const double s_before = -log_marginal_likelihood(model) / model.num_observations();

    // Duplicate one training point exactly (same location, output, value).
    const auto& obs = model.observations().front();
    const Vec2 loc{model.locations()(obs.location, 0), model.locations()(obs.location, 1)};
    MogpModel grown =
        update(model, {{loc, model.outputs()[static_cast<size_t>(obs.output)], obs.value_dbm}});
    const double s_after = -log_marginal_likelihood(grown) / grown.num_observations();
    CHECK(s_after <= s_before + 0.5);

    // And the grown model still matches the dense route.
    const auto problem = reference::problem_from_model(grown);
    CHECK(std::abs(log_marginal_likelihood(grown) -
                   reference::dense_log_marginal_likelihood(problem)) < 1e-6);
}

TEST_CASE("interpolation at a training point under vanishing noise") {
    Rng rng(99);
    const auto ids = ap_names(2);
    std::vector<RssiSample> samples;
    for (int i = 0; i < 12; ++i) {
        const Vec2 x{rng.uniform(0.0, 6.0), rng.uniform(0.0, 6.0)};
        for (int o = 0; o < 2; ++o)
            samples.push_back({x, ids[static_cast<size_t>(o)], -45.0 - 2.0 * o + rng.gaussian(0.0, 3.0)});
    }
    FitOptions opts;
    opts.restarts = 0;
    MogpModel model = fit(samples, ids, opts);
    SeKernelParams kernel{4.0, 1.5};
    Coregionalization coreg;
    coreg.factor = Eigen::MatrixXd::Constant(2, 1, 1.0);
    coreg.diag = Eigen::VectorXd::Constant(2, 0.1);
    model = with_hyperparameters(model, kernel, coreg, 1e-8);

    const auto& first = samples.front();
    std::vector<double> mean, var;
    predict(model, std::vector<Vec2>{first.location}, first.ap_id, mean, var);
    CHECK(mean[0] == doctest::Approx(first.value_dbm).epsilon(1e-4));
    CHECK(var[0] < 1e-4);
}

TEST_CASE("far queries revert to the prior") {
    Rng rng(123);
    const MogpModel model = random_model(rng, 12, 2);
    const int out = 1;
    std::vector<double> mean, var;
    predict(model, std::vector<Vec2>{{500.0, 500.0}}, "ap2", mean, var);
    CHECK(mean[0] == doctest::Approx(model.output_mean()(out)).epsilon(1e-9));
    const double kss = model.kernel().signal_variance * model.coreg().matrix()(out, out);
    CHECK(var[0] == doctest::Approx(kss).epsilon(1e-9));
}

TEST_CASE("posterior variance never exceeds the prior") {
    Rng rng(321);
    const MogpModel model = random_model(rng, 15, 3);
    const Eigen::MatrixXd B = model.coreg().matrix();
    for (int q = 0; q < 200; ++q) {
        const Vec2 query{rng.uniform(-3.0, 11.0), rng.uniform(-3.0, 11.0)};
        const int out = static_cast<int>(rng.uniform() * 3);
        std::vector<double> mean, var;
        predict(model, std::vector<Vec2>{query}, model.outputs()[static_cast<size_t>(out)], mean,
                var);
        CHECK(var[0] >= 0.0);
        CHECK(var[0] <= model.kernel().signal_variance * B(out, out) + 1e-8);
    }
}

TEST_CASE("field prediction equals individual predictions") {
    Rng rng(456);
    const MogpModel model = random_model(rng, 10, 2);
    const GridSpec grid({1.0, 1.0}, 2.0, 2, 2);
    ScalarField mean, var;
    predict_field(model, grid, "ap1", mean, var);
    for (int j = 0; j < 2; ++j) {
        for (int i = 0; i < 2; ++i) {
            std::vector<double> m1, v1;
            predict(model, std::vector<Vec2>{grid_cell_center(grid, i, j)}, "ap1", m1, v1);
            CHECK(mean.at(i, j) == doctest::Approx(m1[0]).epsilon(1e-12));
            CHECK(var.at(i, j) == doctest::Approx(v1[0]).epsilon(1e-12));
            CHECK(var.at(i, j) >= 0.0);
        }
    }
}

TEST_CASE("dense zero-noise training reproduces the simulated field") {
    PathLossParams params;
    params.shadowing_sigma = 4.0;
    params.shadowing_corr_length = 3.0;
    params.fading_sigma = 0.0;
    const World world =
        build_world({0, 0}, {8, 6}, 0.5,
                    {{"ap1", {1.5, 1.5}}, {"ap2", {6.5, 1.0}}, {"ap3", {4.0, 5.0}}}, params, 7);

    std::vector<RssiSample> samples;
    Rng rng(1);
    for (double x = 0.35; x < 8.0; x += 0.7) {
        for (double y = 0.35; y < 6.0; y += 0.7) {
            for (const auto& ap : world.aps)
                samples.push_back(sample_measurement(ap, {x, y}, 0.0, rng));
        }
    }
    FitOptions opts;
    opts.restarts = 2;
    opts.max_iters = 120;
    const MogpModel model = fit(samples, {"ap1", "ap2", "ap3"}, opts);

    const GridSpec grid({0.0, 0.0}, 0.5, 16, 12);
    double worst_rmse = 0.0;
    for (const auto& ap : world.aps) {
        ScalarField mean, var;
        predict_field(model, grid, ap.ap_id, mean, var);
        double se = 0.0;
        for (int j = 0; j < grid.height; ++j)
            for (int i = 0; i < grid.width; ++i) {
                const double d = mean.at(i, j) - mean_rssi(ap, grid_cell_center(grid, i, j));
                se += d * d;
            }
        worst_rmse = std::max(worst_rmse, std::sqrt(se / grid.cell_count()));
    }
    CHECK(worst_rmse < 1.0);
}

TEST_CASE("update with no samples changes nothing") {
    Rng rng(654);
    const MogpModel model = random_model(rng, 8, 2);
    const MogpModel same = update(model, {});
    std::vector<double> m0, v0, m1, v1;
    const std::vector<Vec2> q{{2.0, 2.0}, {7.0, 3.0}};
    predict(model, q, "ap1", m0, v0);
    predict(same, q, "ap1", m1, v1);
    CHECK(m0 == m1);
    CHECK(v0 == v1);
}

TEST_CASE("conditioning on a noiseless observation shrinks variance there") {
    Rng rng(777);
    MogpModel model = random_model(rng, 10, 2);
    model = with_hyperparameters(model, model.kernel(), model.coreg(), 1e-6);
    const Vec2 q{4.2, 4.7};
    std::vector<double> mean0, var0;
    predict(model, std::vector<Vec2>{q}, "ap1", mean0, var0);
    const MogpModel grown = update(model, {{q, "ap1", mean0[0]}});
    std::vector<double> mean1, var1;
    predict(grown, std::vector<Vec2>{q}, "ap1", mean1, var1);
    CHECK(var1[0] <= var0[0] + 1e-9);
}

TEST_CASE("sequential updates equal one batched rebuild at fixed hyperparameters") {
    Rng rng(888);
    const auto ids = ap_names(2);
    std::vector<RssiSample> first, second, third;
    for (int i = 0; i < 8; ++i) {
        const Vec2 x{rng.uniform(0.0, 8.0), rng.uniform(0.0, 8.0)};
        for (const auto& id : ids) {
            RssiSample s{x, id, rng.gaussian(-50.0, 4.0)};
            (i < 4 ? first : (i < 6 ? second : third)).push_back(s);
        }
    }
    FitOptions opts;
    opts.restarts = 0;
    opts.refit_cadence = 1000;  // hold hyperparameters fixed through updates
    MogpModel incremental = fit(first, ids, opts);
    const SeKernelParams kernel{3.0, 1.8};
    Coregionalization coreg;
    coreg.factor = Eigen::MatrixXd::Constant(2, 1, 1.2);
    coreg.diag = Eigen::VectorXd::Constant(2, 0.2);
    incremental = with_hyperparameters(incremental, kernel, coreg, 0.15);
    incremental = update(update(incremental, second), third);

    std::vector<RssiSample> all = first;
    all.insert(all.end(), second.begin(), second.end());
    all.insert(all.end(), third.begin(), third.end());
    MogpModel batched = fit(all, ids, opts);
    batched = with_hyperparameters(batched, kernel, coreg, 0.15);

    Rng qrng(9);
    for (int q = 0; q < 20; ++q) {
        const std::vector<Vec2> query{{qrng.uniform(0.0, 8.0), qrng.uniform(0.0, 8.0)}};
        for (const auto& id : ids) {
            std::vector<double> mi, vi, mb, vb;
            predict(incremental, query, id, mi, vi);
            predict(batched, query, id, mb, vb);
            CHECK(mi[0] == doctest::Approx(mb[0]).epsilon(1e-6));
            CHECK(vi[0] == doctest::Approx(vb[0]).epsilon(1e-6));
        }
    }
}

TEST_CASE("refit cadence re-optimizes on schedule") {
    Rng rng(414);
    const auto ids = ap_names(2);
    std::vector<RssiSample> initial;
    for (int i = 0; i < 10; ++i) {
        const Vec2 x{rng.uniform(0.0, 8.0), rng.uniform(0.0, 8.0)};
        for (const auto& id : ids)
            initial.push_back({x, id, -50.0 + 5.0 * std::sin(x.x) + rng.gaussian(0.0, 0.5)});
    }
    FitOptions opts;
    opts.restarts = 1;
    opts.max_iters = 40;
    opts.refit_cadence = 2;
    MogpModel model = fit(initial, ids, opts);
    CHECK(model.updates_since_refit() == 0);
    const Vec2 x1{rng.uniform(0.0, 8.0), rng.uniform(0.0, 8.0)};
    model = update(model, {{x1, "ap1", -48.0}, {x1, "ap2", -52.0}});
    CHECK(model.updates_since_refit() == 1);
    const Vec2 x2{rng.uniform(0.0, 8.0), rng.uniform(0.0, 8.0)};
    model = update(model, {{x2, "ap1", -47.0}, {x2, "ap2", -51.0}});
    CHECK(model.updates_since_refit() == 0);  // cadence hit, refit happened
}

TEST_CASE("model file round trip preserves predictions") {
    Rng rng(111);
    const MogpModel model = random_model(rng, 9, 3);
    const MogpModel restored = model_from_json_text(model_to_json_text(model));
    const std::vector<Vec2> q{{1.0, 2.0}, {6.5, 3.5}, {-0.5, 7.0}};
    for (const auto& id : model.outputs()) {
        std::vector<double> m0, v0, m1, v1;
        predict(model, q, id, m0, v0);
        predict(restored, q, id, m1, v1);
        for (size_t k = 0; k < q.size(); ++k) {
            CHECK(m0[k] == doctest::Approx(m1[k]).epsilon(1e-12));
            CHECK(v0[k] == doctest::Approx(v1[k]).epsilon(1e-12));
        }
    }
}

TEST_CASE("fit input validation") {
    CHECK_THROWS_AS(fit({}, {"ap1"}, {}), std::invalid_argument);
    std::vector<RssiSample> samples = {{{1.0, 1.0}, "ap1", -40.0}};
    CHECK_THROWS_AS(fit(samples, {"ap1", "ap2"}, {}), std::invalid_argument);
    std::vector<RssiSample> bad = {{{std::nan(""), 1.0}, "ap1", -40.0}};
    CHECK_THROWS_AS(fit(bad, {"ap1"}, {}), std::invalid_argument);
    CHECK_THROWS_AS(fit(samples, {"apX"}, {}), std::out_of_range);
}

TEST_CASE("a starved optimizer returns best-so-far with the warning flag") {
    Rng rng(606);
    const auto samples = gp_draw(rng, 60, 4.0, 2.0, 0.3);
    FitOptions opts;
    opts.restarts = 1;
    opts.max_iters = 3;  // cannot reach the stall-based convergence check
    const MogpModel model = fit(samples, {"ap1"}, opts);
    CHECK(model.fit_warning());
    std::vector<double> mean, var;
    predict(model, std::vector<Vec2>{{5.0, 5.0}}, "ap1", mean, var);  // still usable
    CHECK(std::isfinite(mean[0]));
}

TEST_CASE("derivative-free fallback still improves the likelihood") {
    Rng rng(151);
    const auto samples = gp_draw(rng, 40, 4.0, 2.0, 0.3);
    FitOptions heuristic;
    heuristic.restarts = 0;
    const MogpModel base = fit(samples, {"ap1"}, heuristic);

    FitOptions opts;
    opts.use_gradients = false;
    opts.restarts = 1;
    opts.max_iters = 60;
    const MogpModel tuned = fit(samples, {"ap1"}, opts);
    CHECK(log_marginal_likelihood(tuned) >= log_marginal_likelihood(base) - 1e-9);
}
