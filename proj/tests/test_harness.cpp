#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mgprl/harness.hpp"

using namespace mgprl;

namespace {

World small_world(uint64_t seed = 5) {
    PathLossParams params;
    params.shadowing_sigma = 3.0;
    params.shadowing_corr_length = 3.0;
    params.fading_sigma = 0.5;
    return build_world({0, 0}, {8, 6}, 0.5,
                       {{"ap1", {1.5, 1.5}}, {"ap2", {6.5, 1.0}}, {"ap3", {4.0, 5.0}}}, params,
                       seed);
}

EpisodeConfig small_config(int cycles, uint64_t master_seed) {
    EpisodeConfig cfg;
    cfg.world = small_world();
    cfg.robot_starts = {Pose2D(2.0, 2.0, 0.0), Pose2D(6.0, 4.0, M_PI / 2.0)};
    cfg.initial_samples = 12;
    cfg.cycles = cycles;
    cfg.alignment.lambda = 2.0;
    cfg.fit.restarts = 1;
    cfg.fit.max_iters = 50;
    cfg.fit.refit_cadence = 5;
    cfg.master_seed = master_seed;
    return cfg;
}

}  // namespace

TEST_CASE("compute_ale closed forms") {
    CHECK(compute_ale({{1, 1}, {2, 2}}, {{1, 1}, {2, 2}}) == doctest::Approx(0.0));
    CHECK(compute_ale({{3, 4}}, {{0, 0}}) == doctest::Approx(5.0));
    CHECK(compute_ale({{1, 0}, {3, 0}}, {{0, 0}, {0, 0}}) == doctest::Approx(2.0));
    CHECK_THROWS_AS(compute_ale({{1, 1}}, {}), std::invalid_argument);
}

TEST_CASE("compute_field_rmse closed forms") {
    const GridSpec g({0, 0}, 1.0, 3, 3);
    ScalarField f(g);
    for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i) f.at(i, j) = i + j;
    CHECK(compute_field_rmse(f, [&](const Vec2& p) {
              const auto [i, j] = g.clamped_cell_of(p);
              return static_cast<double>(i + j);
          }) == doctest::Approx(0.0));

    CHECK(compute_field_rmse(f, [&](const Vec2& p) {
              const auto [i, j] = g.clamped_cell_of(p);
              return i + j - 2.0;  // constant +2 bias in the prediction
          }) == doctest::Approx(2.0));

    // hand-computed: predictions all zero, truth = cell index values
    ScalarField zero(g, 0.0);
    double sum_sq = 0.0;
    for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i) sum_sq += (i + j) * (i + j);
    CHECK(compute_field_rmse(zero, [&](const Vec2& p) {
              const auto [i, j] = g.clamped_cell_of(p);
              return static_cast<double>(i + j);
          }) == doctest::Approx(std::sqrt(sum_sq / 9.0)));
}

TEST_CASE("minimal two-robot episode completes with sane metrics") {
    const EpisodeConfig cfg = small_config(14, 71);
    const EpisodeResult res = run_episode(cfg);

    CHECK(res.records.size() == static_cast<size_t>(14 * 2));
    int row = 0;
    for (const auto& r : res.records) {
        CHECK(r.cycle == row / 2 + 1);
        CHECK(r.samples_per_ap == cfg.initial_samples + r.cycle * cfg.samples_per_cycle);
        if (r.status == "ok") {
            CHECK(r.ale_ap >= 0.0);
            CHECK(std::isfinite(r.ale_r));
            CHECK(r.field_rmse_db >= 0.0);
            CHECK(r.mean_uncertainty_db >= 0.0);
        }
        ++row;
    }
    // by the end the robots should align at the relaxed gate
    double late_accept = 0.0;
    for (const auto& r : res.records)
        if (r.cycle > 10) late_accept += r.accept_rate;
    CHECK(late_accept > 0.0);
    CHECK(res.summary.samples_per_robot == cfg.initial_samples + cfg.cycles);
    CHECK(res.summary.final_ale_r < 2.0);
}

TEST_CASE("same master seed reproduces the metrics CSV byte for byte") {
    const EpisodeResult a = run_episode(small_config(6, 99));
    const EpisodeResult b = run_episode(small_config(6, 99));
    CHECK(a.metrics_csv == b.metrics_csv);
    CHECK(!a.metrics_csv.empty());

    const EpisodeResult c = run_episode(small_config(6, 100));
    CHECK(a.metrics_csv != c.metrics_csv);
}

TEST_CASE("artifact bundle files land on disk") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "mgprl_test_bundle";
    fs::remove_all(dir);
    const EpisodeResult res = run_episode(small_config(4, 7), dir.string());
    CHECK(fs::exists(dir / "metrics.csv"));
    CHECK(fs::exists(dir / "timing.csv"));
    CHECK(fs::exists(dir / "summary.json"));
    CHECK(fs::exists(dir / "beliefs" / "robot_r1.jsonl"));
    CHECK(fs::exists(dir / "alignments.jsonl"));
    // final-cycle snapshots, one mean and one variance file per (robot, AP)
    int fields = 0;
    for (const auto& e : fs::directory_iterator(dir / "fields")) {
        (void)e;
        ++fields;
    }
    CHECK(fields == 2 * 3 * 2);

    std::ifstream in(dir / "metrics.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header ==
          "cycle,robot,samples_per_ap,ale_ap_m,ale_r_m,field_rmse_db,mean_uncertainty_db,"
          "accept_rate,status");
    fs::remove_all(dir);
}

TEST_CASE("AP dropout episodes run on partially observed data") {
    EpisodeConfig cfg = small_config(6, 21);
    cfg.ap_dropout = 0.3;
    const EpisodeResult res = run_episode(cfg);
    CHECK(res.records.size() == static_cast<size_t>(6 * 2));
    int ok_rows = 0;
    for (const auto& r : res.records)
        if (r.status == "ok") ++ok_rows;
    CHECK(ok_rows > 0);
}

TEST_CASE("config validation catches bad setups") {
    EpisodeConfig cfg = small_config(5, 1);
    cfg.robot_starts = {Pose2D(2, 2, 0)};
    CHECK_THROWS_AS(run_episode(cfg), std::invalid_argument);

    cfg = small_config(5, 1);
    cfg.robot_starts[0] = Pose2D(100.0, 100.0, 0.0);
    CHECK_THROWS_AS(run_episode(cfg), std::invalid_argument);

    cfg = small_config(5, 1);
    cfg.world->aps.resize(2);
    CHECK_THROWS_AS(run_episode(cfg), std::invalid_argument);
}

TEST_CASE("episode config file parsing, overrides and diagnostics") {
    const std::string config_text = R"({
      "format": "mgprl-episode/1",
      "world": {
        "format": "mgprl-world/1",
        "bounds": {"xmin":0, "ymin":0, "xmax":8, "ymax":6},
        "grid": {"cell_size_m": 0.5},
        "pathloss": {"ref_power_dbm":-20, "ref_distance_m":1, "exponent":3,
                     "shadowing_sigma_db":3, "shadowing_corr_length_m":3, "fading_sigma_db":1},
        "aps": [{"id":"ap1","x":1.5,"y":1.5},{"id":"ap2","x":6.5,"y":1.0},{"id":"ap3","x":4.0,"y":5.0}],
        "seed": 5
      },
      "robots": [{"x":2,"y":2},{"x":6,"y":4,"yaw_deg":90},{"x":4,"y":3}],
      "sampling": {"initial_samples":10, "cycles":5, "noise_level_db":1.0},
      "master_seed": 3
    })";
    const EpisodeConfig cfg = episode_config_from_json_text(config_text, "");
    CHECK(cfg.robot_starts.size() == 3);
    CHECK(cfg.robot_starts[1].yaw == doctest::Approx(M_PI / 2.0));
    CHECK(cfg.noise_level == doctest::Approx(1.0));
    CHECK(cfg.initial_samples == 10);
    CHECK(cfg.world->aps.size() == 3);

    // overrides: value replacement, robot-count truncation, bad keys
    const std::string overridden =
        apply_config_override(config_text, "sampling.noise_level_db=2");
    CHECK(episode_config_from_json_text(overridden, "").noise_level == doctest::Approx(2.0));

    const std::string fewer = apply_config_override(config_text, "robots=2");
    CHECK(episode_config_from_json_text(fewer, "").robot_starts.size() == 2);

    CHECK_THROWS_WITH_AS(apply_config_override(config_text, "sampling.bogus_key=1"),
                         doctest::Contains("bogus_key"), std::invalid_argument);
    CHECK_THROWS_AS(apply_config_override(config_text, "no_equals_sign"), std::invalid_argument);

    // round trip through the resolved form
    const EpisodeConfig back =
        episode_config_from_json_text(episode_config_to_json_text(cfg), "");
    CHECK(back.robot_starts.size() == cfg.robot_starts.size());
    CHECK(back.master_seed == cfg.master_seed);
    CHECK(back.world->aps.size() == cfg.world->aps.size());
}
