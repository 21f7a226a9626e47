#include "mgprl/harness.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace mgprl {

namespace {

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::string fmt_double(double v) {
    if (!std::isfinite(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

}  // namespace

void EpisodeConfig::validate() const {
    if (!world) throw std::invalid_argument("episode: world not resolved");
    if (robot_starts.size() < 2) throw std::invalid_argument("episode: need at least 2 robots");
    if (world->aps.size() < 3) throw std::invalid_argument("episode: need at least 3 APs");
    if (initial_samples < 1) throw std::invalid_argument("episode: initial_samples must be >= 1");
    if (samples_per_cycle < 1) throw std::invalid_argument("episode: samples_per_cycle must be >= 1");
    if (cycles < 1) throw std::invalid_argument("episode: cycles must be >= 1");
    if (noise_level < 0.0) throw std::invalid_argument("episode: noise_level must be >= 0");
    if (ap_dropout < 0.0 || ap_dropout >= 1.0)
        throw std::invalid_argument("episode: ap_dropout must lie in [0, 1)");
    if (!(coarse_cell > 0.0)) throw std::invalid_argument("episode: coarse_cell must be > 0");
    if (!(walk_step > 0.0)) throw std::invalid_argument("episode: walk_step must be > 0");
    for (const auto& p : robot_starts)
        if (!world->contains(p.position()))
            throw std::invalid_argument("episode: robot start outside world bounds");
    weighting.validate();
    alignment.validate();
}

double compute_ale(const std::vector<Vec2>& estimates, const std::vector<Vec2>& truth) {
    if (estimates.size() != truth.size())
        throw std::invalid_argument("compute_ale: length mismatch");
    if (estimates.empty()) throw std::invalid_argument("compute_ale: empty input");
    double s = 0.0;
    for (size_t i = 0; i < estimates.size(); ++i) s += distance(estimates[i], truth[i]);
    return s / static_cast<double>(estimates.size());
}

double compute_field_rmse(const ScalarField& predicted,
                          const std::function<double(const Vec2&)>& truth_fn) {
    const GridSpec& g = predicted.grid;
    double s = 0.0;
    for (int j = 0; j < g.height; ++j) {
        for (int i = 0; i < g.width; ++i) {
            const double d = predicted.at(i, j) - truth_fn(grid_cell_center(g, i, j));
            s += d * d;
        }
    }
    return std::sqrt(s / static_cast<double>(g.cell_count()));
}

namespace {

// Harness-side per-robot ground truth and streams.
struct RobotSim {
    Pose2D world_pose;
    double heading = 0.0;
    Transform2D own_to_world;   // start pose
    Transform2D world_to_own;
    Rng walk;
    Rng meas;

    RobotSim(const Pose2D& start, uint64_t master, uint64_t idx)
        : world_pose(start),
          heading(start.yaw),
          own_to_world(Transform2D::from_pose(start)),
          world_to_own(own_to_world.inverse()),
          walk(derive_seed(master, "walk", idx)),
          meas(derive_seed(master, "measurement", idx)) {}
};

// Robot-side state: holds no world handle, only samples and beliefs.
struct RobotAgent {
    std::string id;
    Pose2D own_pose;
    std::vector<Vec2> sample_locations;  // own frame, for the B_1 bounding box
    MogpModel model;
    RobotBeliefMsg belief;
    std::vector<ScalarField> metric_mean;  // per AP, world grid (harness-side views)
    std::vector<ScalarField> metric_var;
    double fit_time = 0.0;
    double predict_time = 0.0;
    std::string status = "ok";
};

// One heading change per cycle, straight steps in between (walls still
// reflect the heading).
void walk_turn(RobotSim& sim, double max_turn) {
    sim.heading = normalize_angle(sim.heading + sim.walk.uniform(-max_turn, max_turn));
}

void walk_step(RobotSim& sim, const World& world, double step) {
    double nx = sim.world_pose.x + step * std::cos(sim.heading);
    double ny = sim.world_pose.y + step * std::sin(sim.heading);
    // Reflect at the world rectangle.
    if (nx < world.min_corner.x) {
        nx = 2.0 * world.min_corner.x - nx;
        sim.heading = normalize_angle(M_PI - sim.heading);
    } else if (nx > world.max_corner.x) {
        nx = 2.0 * world.max_corner.x - nx;
        sim.heading = normalize_angle(M_PI - sim.heading);
    }
    if (ny < world.min_corner.y) {
        ny = 2.0 * world.min_corner.y - ny;
        sim.heading = normalize_angle(-sim.heading);
    } else if (ny > world.max_corner.y) {
        ny = 2.0 * world.max_corner.y - ny;
        sim.heading = normalize_angle(-sim.heading);
    }
    nx = std::clamp(nx, world.min_corner.x, world.max_corner.x);
    ny = std::clamp(ny, world.min_corner.y, world.max_corner.y);
    sim.world_pose = Pose2D(nx, ny, sim.heading);
}

// Samples every audible AP at the robot's current position; returned samples
// carry own-frame locations.
std::vector<RssiSample> collect_samples(RobotSim& sim, RobotAgent& agent, const World& world,
                                        const EpisodeConfig& cfg) {
    const Vec2 world_pos = sim.world_pose.position();
    const Vec2 own_pos = apply(sim.world_to_own, world_pos);
    agent.own_pose = Pose2D(own_pos.x, own_pos.y,
                            normalize_angle(sim.world_pose.yaw - sim.own_to_world.rotation));
    agent.sample_locations.push_back(own_pos);
    std::vector<RssiSample> out;
    for (const auto& ap : world.aps) {
        if (cfg.ap_dropout > 0.0 && sim.meas.uniform() < cfg.ap_dropout) continue;
        RssiSample s = sample_measurement(ap, world_pos, cfg.noise_level, sim.meas);
        s.location = own_pos;
        out.push_back(std::move(s));
    }
    return out;
}

GridSpec coarse_grid_for(const RobotAgent& agent, const EpisodeConfig& cfg) {
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    double ymin = xmin, ymax = -xmin;
    for (const auto& p : agent.sample_locations) {
        xmin = std::min(xmin, p.x);
        xmax = std::max(xmax, p.x);
        ymin = std::min(ymin, p.y);
        ymax = std::max(ymax, p.y);
    }
    xmin -= cfg.bounds_padding;
    ymin -= cfg.bounds_padding;
    xmax += cfg.bounds_padding;
    ymax += cfg.bounds_padding;
    const int w = std::max(2, static_cast<int>(std::ceil((xmax - xmin) / cfg.coarse_cell)));
    const int h = std::max(2, static_cast<int>(std::ceil((ymax - ymin) / cfg.coarse_cell)));
    return {{xmin, ymin}, cfg.coarse_cell, w, h};
}

// Re-estimates all AP positions and rebuilds the robot's belief message.
// Runs on robot-side knowledge only: the model, its own samples, and the AP
// identifiers it has heard.
void reestimate_aps(RobotAgent& agent, const std::vector<std::string>& ap_ids,
                    const EpisodeConfig& cfg, int cycle) {
    HierarchyConfig hcfg;
    hcfg.levels = cfg.hierarchy_levels;
    hcfg.refinement_factor = cfg.refinement_factor;
    hcfg.neighborhood_radius = cfg.neighborhood_radius;
    hcfg.coarsest_grid = coarse_grid_for(agent, cfg);

    agent.belief = RobotBeliefMsg{};
    agent.belief.robot_id = agent.id;
    agent.belief.timestamp = cycle;
    agent.belief.self_position = agent.own_pose;

    // Coverage mask over B_1: the search stays inside the region the robot
    // has actually measured.
    const GridSpec& b1 = hcfg.coarsest_grid;
    std::vector<char> covered(static_cast<size_t>(b1.cell_count()), 0);
    const double r2 = cfg.coverage_radius * cfg.coverage_radius;
    for (int j = 0; j < b1.height; ++j) {
        for (int i = 0; i < b1.width; ++i) {
            const Vec2 c = grid_cell_center(b1, i, j);
            for (const auto& s : agent.sample_locations) {
                if ((c - s).squared_norm() <= r2) {
                    covered[static_cast<size_t>(b1.index(i, j))] = 1;
                    break;
                }
            }
        }
    }

    const double t0 = now_seconds();
    for (const auto& ap_id : ap_ids) {
        ScalarField b1_mean, b1_var;
        predict_field(agent.model, b1, ap_id, b1_mean, b1_var);
        ScalarField masked = b1_mean;
        double floor = std::numeric_limits<double>::infinity();
        for (double v : b1_mean.values) floor = std::min(floor, v);
        floor -= 1.0;
        for (size_t k = 0; k < masked.values.size(); ++k)
            if (!covered[k]) masked.values[k] = floor;

        bool first_level = true;
        const Vec2 hier = hierarchical_argmax(
            [&](const GridSpec& grid) {
                if (first_level) {
                    first_level = false;
                    return masked;
                }
                ScalarField mean, var;
                predict_field(agent.model, grid, ap_id, mean, var);
                return mean;
            },
            hcfg);

        const auto candidates = detect_local_maxima(masked, hcfg, cfg.rssi_closeness_db);
        auto ests = weigh_candidates(ap_id, hier, candidates, b1_var, hcfg, cfg.weighting);
        for (auto& e : ests) agent.belief.estimates.push_back(std::move(e));
    }
    agent.predict_time += now_seconds() - t0;
}

struct BundleWriter {
    fs::path root;
    bool enabled = false;
    std::map<std::string, std::ofstream> belief_logs;
    std::ofstream alignment_log;

    explicit BundleWriter(const std::string& out_dir) {
        if (out_dir.empty()) return;
        enabled = true;
        root = out_dir;
        fs::create_directories(root / "beliefs");
        fs::create_directories(root / "fields");
        alignment_log.open(root / "alignments.jsonl");
    }

    void log_belief(const RobotBeliefMsg& msg) {
        if (!enabled) return;
        auto it = belief_logs.find(msg.robot_id);
        if (it == belief_logs.end()) {
            it = belief_logs
                     .emplace(msg.robot_id,
                              std::ofstream(root / "beliefs" / ("robot_" + msg.robot_id + ".jsonl")))
                     .first;
        }
        it->second << belief_to_json_text(msg);
    }

    void log_alignment(int cycle, const HullAlignment& al) {
        if (!enabled) return;
        json j;
        j["cycle"] = cycle;
        j["a"] = al.robot_a;
        j["b"] = al.robot_b;
        j["error_m2"] = al.weighted_error;
        j["accepted"] = al.accepted;
        j["degenerate"] = al.degenerate;
        j["rotation_rad"] = al.transform.rotation;
        j["tx_m"] = al.transform.translation.x;
        j["ty_m"] = al.transform.translation.y;
        alignment_log << j.dump() << "\n";
    }

    void write_field(const std::string& name, const ScalarField& f) {
        if (!enabled) return;
        json j;
        j["format"] = "mgprl-field/1";
        j["grid"] = {{"origin_x", f.grid.origin.x}, {"origin_y", f.grid.origin.y},
                     {"cell_size", f.grid.cell_size}, {"width", f.grid.width},
                     {"height", f.grid.height}};
        j["values"] = f.values;
        std::ofstream out(root / "fields" / (name + ".json"));
        out << j.dump() << "\n";
    }

    void write_text(const std::string& name, const std::string& text) {
        if (!enabled) return;
        std::ofstream out(root / name);
        out << text;
    }
};

}  // namespace

EpisodeResult run_episode(const EpisodeConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    const World& world = *cfg.world;
    const int n = static_cast<int>(cfg.robot_starts.size());
    const int m = static_cast<int>(world.aps.size());

    std::vector<std::string> ap_ids;
    for (const auto& ap : world.aps) ap_ids.push_back(ap.ap_id);

    BundleWriter bundle(out_dir);

    std::vector<RobotSim> sims;
    std::vector<RobotAgent> agents(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        sims.emplace_back(cfg.robot_starts[static_cast<size_t>(i)], cfg.master_seed,
                          static_cast<uint64_t>(i));
        agents[static_cast<size_t>(i)].id = "r" + std::to_string(i + 1);
    }

    // Initial random-walk collection and first fit.
    for (int i = 0; i < n; ++i) {
        auto& sim = sims[static_cast<size_t>(i)];
        auto& agent = agents[static_cast<size_t>(i)];
        std::vector<RssiSample> initial;
        for (int s = 0; s < cfg.initial_samples; ++s) {
            if (s > 0) {
                if ((s - 1) % cfg.samples_per_cycle == 0) walk_turn(sim, cfg.walk_max_turn);
                walk_step(sim, world, cfg.walk_step);
            }
            auto batch = collect_samples(sim, agent, world, cfg);
            initial.insert(initial.end(), batch.begin(), batch.end());
        }
        FitOptions opts = cfg.fit;
        opts.seed = derive_seed(cfg.master_seed, "fit", static_cast<uint64_t>(i));
        const double t0 = now_seconds();
        agent.model = fit(initial, ap_ids, opts);
        agent.fit_time += now_seconds() - t0;
    }

    const GridSpec metrics_grid = world.grid();
    std::vector<Vec2> metric_centers;
    for (int j = 0; j < metrics_grid.height; ++j)
        for (int i = 0; i < metrics_grid.width; ++i)
            metric_centers.push_back(grid_cell_center(metrics_grid, i, j));

    EpisodeResult result;

    for (int cycle = 1; cycle <= cfg.cycles; ++cycle) {
        // Robot-side work is independent; one robot per task.
#pragma omp parallel for schedule(static, 1)
        for (int i = 0; i < n; ++i) {
            auto& sim = sims[static_cast<size_t>(i)];
            auto& agent = agents[static_cast<size_t>(i)];
            agent.status = "ok";
            agent.fit_time = 0.0;
            agent.predict_time = 0.0;
            try {
                std::vector<RssiSample> fresh;
                walk_turn(sim, cfg.walk_max_turn);
                for (int s = 0; s < cfg.samples_per_cycle; ++s) {
                    walk_step(sim, world, cfg.walk_step);
                    auto batch = collect_samples(sim, agent, world, cfg);
                    fresh.insert(fresh.end(), batch.begin(), batch.end());
                }
                const double t0 = now_seconds();
                agent.model = update(agent.model, fresh);
                agent.fit_time += now_seconds() - t0;

                reestimate_aps(agent, ap_ids, cfg, cycle);

                // Harness-side views of the predicted fields on the world
                // grid (own-frame queries mapped from world cell centers).
                const double t1 = now_seconds();
                agent.metric_mean.assign(static_cast<size_t>(m), ScalarField(metrics_grid));
                agent.metric_var.assign(static_cast<size_t>(m), ScalarField(metrics_grid));
                std::vector<Vec2> own_queries(metric_centers.size());
                for (size_t q = 0; q < metric_centers.size(); ++q)
                    own_queries[q] = apply(sim.world_to_own, metric_centers[q]);
                for (int a = 0; a < m; ++a) {
                    std::vector<double> mu, var;
                    predict(agent.model, own_queries, ap_ids[static_cast<size_t>(a)], mu, var);
                    agent.metric_mean[static_cast<size_t>(a)].values = std::move(mu);
                    agent.metric_var[static_cast<size_t>(a)].values = std::move(var);
                }
                agent.predict_time += now_seconds() - t1;
            } catch (const std::exception& e) {
                agent.status = std::string("error: ") + e.what();
            }
        }

        // Synchronous lossless broadcast: exercise the wire format on every
        // exchanged message.
        std::vector<RobotBeliefMsg> received(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            received[static_cast<size_t>(i)] =
                belief_from_json_text(belief_to_json_text(agents[static_cast<size_t>(i)].belief));
            bundle.log_belief(agents[static_cast<size_t>(i)].belief);
        }

        // Pairwise alignments (ordered pairs).
        std::vector<std::vector<std::optional<HullAlignment>>> aligns(
            static_cast<size_t>(n), std::vector<std::optional<HullAlignment>>(static_cast<size_t>(n)));
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                if (i == j || agents[static_cast<size_t>(i)].status != "ok" ||
                    agents[static_cast<size_t>(j)].status != "ok")
                    continue;
                try {
                    HullAlignment al = align_pair(received[static_cast<size_t>(i)],
                                                  received[static_cast<size_t>(j)], cfg.alignment);
                    bundle.log_alignment(cycle, al);
                    aligns[static_cast<size_t>(i)][static_cast<size_t>(j)] = std::move(al);
                } catch (const InsufficientOverlapError&) {
                    // recorded through the accept rate; nothing to align
                }
            }
        }

        // Metrics.
        for (int i = 0; i < n; ++i) {
            const auto& sim = sims[static_cast<size_t>(i)];
            const auto& agent = agents[static_cast<size_t>(i)];
            MetricsRecord rec;
            rec.cycle = cycle;
            rec.robot_id = agent.id;
            rec.samples_per_ap = cfg.initial_samples + cycle * cfg.samples_per_cycle;
            rec.fit_time_s = agent.fit_time;
            rec.predict_time_s = agent.predict_time;
            rec.status = agent.status;
            if (agent.status != "ok") {
                rec.ale_ap = rec.ale_r = rec.field_rmse_db = rec.mean_uncertainty_db =
                    std::numeric_limits<double>::quiet_NaN();
                result.records.push_back(std::move(rec));
                continue;
            }

            // Alignment-corrected AP picks: use the alignment with the
            // smallest error where this robot is side a (accepted ones
            // first); hierarchical estimates elsewhere.
            const HullAlignment* best_align = nullptr;
            int accepted = 0;
            for (int j = 0; j < n; ++j) {
                const auto& al = aligns[static_cast<size_t>(i)][static_cast<size_t>(j)];
                if (!al) continue;
                if (al->accepted) ++accepted;
                const bool better =
                    !best_align ||
                    std::make_pair(!al->accepted, al->weighted_error) <
                        std::make_pair(!best_align->accepted, best_align->weighted_error);
                if (better) best_align = &*al;
            }
            rec.accept_rate = n > 1 ? static_cast<double>(accepted) / (n - 1) : 0.0;
            // Rejected gates still contribute their best transform's picks:
            // when no pairing beats the gate the hull is refreshed from the
            // transformation that aligned best.
            const bool use_corrected = best_align != nullptr;

            std::map<std::string, Vec2> picks;
            for (const auto& e : agent.belief.estimates)
                if (e.kind == ApEstimate::Kind::hierarchical) picks[e.ap_id] = e.position;
            if (use_corrected) {
                for (const auto& c : best_align->correspondence)
                    picks[c.ap_id] =
                        agent.belief.estimates[static_cast<size_t>(c.index_a)].position;
            }
            std::vector<Vec2> est, truth;
            for (const auto& ap : world.aps) {
                est.push_back(picks.at(ap.ap_id));
                truth.push_back(apply(sim.world_to_own, ap.position));
            }
            rec.ale_ap = compute_ale(est, truth);

            // Relative-localization error against every neighbor, from the
            // best-found transform per pair (the gate decision is reported
            // separately through accept_rate).
            std::vector<double> rel_errors;
            for (int j = 0; j < n; ++j) {
                const auto& al = aligns[static_cast<size_t>(i)][static_cast<size_t>(j)];
                if (!al) continue;
                const Vec2 est_rel = apply(
                    al->transform, received[static_cast<size_t>(j)].self_position.position());
                const Vec2 true_rel =
                    apply(sim.world_to_own, sims[static_cast<size_t>(j)].world_pose.position());
                rel_errors.push_back(distance(est_rel, true_rel));
            }
            if (rel_errors.empty()) {
                rec.ale_r = std::numeric_limits<double>::quiet_NaN();
                rec.status = "no_alignment";
            } else {
                rec.ale_r = mean_of(rel_errors);
            }

            std::vector<double> rmses, uncert;
            for (int a = 0; a < m; ++a) {
                const auto& ap = world.aps[static_cast<size_t>(a)];
                rmses.push_back(compute_field_rmse(
                    agent.metric_mean[static_cast<size_t>(a)],
                    [&](const Vec2& c) { return mean_rssi(ap, c); }));
                double s = 0.0;
                for (double v : agent.metric_var[static_cast<size_t>(a)].values)
                    s += std::sqrt(std::max(v, 0.0));
                uncert.push_back(s / static_cast<double>(metrics_grid.cell_count()));
            }
            rec.field_rmse_db = mean_of(rmses);
            rec.mean_uncertainty_db = mean_of(uncert);
            result.records.push_back(std::move(rec));
        }

        const bool snapshot =
            cycle == cfg.cycles || (cfg.snapshot_stride > 0 && cycle % cfg.snapshot_stride == 0);
        if (snapshot && bundle.enabled) {
            for (int i = 0; i < n; ++i) {
                const auto& agent = agents[static_cast<size_t>(i)];
                if (agent.status != "ok") continue;
                for (int a = 0; a < m; ++a) {
                    const std::string base = "cycle" + std::to_string(cycle) + "_" + agent.id +
                                             "_" + ap_ids[static_cast<size_t>(a)];
                    bundle.write_field(base + "_mean", agent.metric_mean[static_cast<size_t>(a)]);
                    bundle.write_field(base + "_var", agent.metric_var[static_cast<size_t>(a)]);
                }
            }
        }
    }

    // CSVs (metrics deterministic; timing separate because wall clocks are not).
    {
        std::ostringstream mcsv, tcsv;
        mcsv << "cycle,robot,samples_per_ap,ale_ap_m,ale_r_m,field_rmse_db,mean_uncertainty_db,"
                "accept_rate,status\n";
        tcsv << "cycle,robot,fit_time_s,predict_time_s\n";
        for (const auto& r : result.records) {
            mcsv << r.cycle << ',' << r.robot_id << ',' << r.samples_per_ap << ','
                 << fmt_double(r.ale_ap) << ',' << fmt_double(r.ale_r) << ','
                 << fmt_double(r.field_rmse_db) << ',' << fmt_double(r.mean_uncertainty_db) << ','
                 << fmt_double(r.accept_rate) << ',' << r.status << '\n';
            tcsv << r.cycle << ',' << r.robot_id << ',' << fmt_double(r.fit_time_s) << ','
                 << fmt_double(r.predict_time_s) << '\n';
        }
        result.metrics_csv = mcsv.str();
        result.timing_csv = tcsv.str();
    }

    // Final-cycle summary.
    {
        std::vector<double> ale_ap, ale_r, rmse, unc, acc;
        for (const auto& r : result.records) {
            if (r.cycle != cfg.cycles) continue;
            if (std::isfinite(r.ale_ap)) ale_ap.push_back(r.ale_ap);
            if (std::isfinite(r.ale_r)) ale_r.push_back(r.ale_r);
            if (std::isfinite(r.field_rmse_db)) rmse.push_back(r.field_rmse_db);
            if (std::isfinite(r.mean_uncertainty_db)) unc.push_back(r.mean_uncertainty_db);
            acc.push_back(r.accept_rate);
        }
        result.summary.final_ale_ap = mean_of(ale_ap);
        result.summary.final_ale_r = mean_of(ale_r);
        result.summary.final_rmse_db = mean_of(rmse);
        result.summary.final_uncertainty_db = mean_of(unc);
        result.summary.final_accept_rate = mean_of(acc);
        result.summary.samples_per_robot = cfg.initial_samples + cfg.cycles * cfg.samples_per_cycle;
    }

    if (bundle.enabled) {
        bundle.write_text("metrics.csv", result.metrics_csv);
        bundle.write_text("timing.csv", result.timing_csv);
        json s;
        s["format"] = "mgprl-summary/1";
        s["robots"] = n;
        s["aps"] = m;
        s["cycles"] = cfg.cycles;
        s["samples_per_robot"] = result.summary.samples_per_robot;
        s["final"] = {{"ale_ap_m", result.summary.final_ale_ap},
                      {"ale_r_m", result.summary.final_ale_r},
                      {"field_rmse_db", result.summary.final_rmse_db},
                      {"mean_uncertainty_db", result.summary.final_uncertainty_db},
                      {"accept_rate", result.summary.final_accept_rate}};
        bundle.write_text("summary.json", s.dump(2) + "\n");
    }
    return result;
}

namespace {

void get_if(const json& j, const char* key, double& out) {
    if (j.contains(key)) out = j.at(key).get<double>();
}
void get_if(const json& j, const char* key, int& out) {
    if (j.contains(key)) out = j.at(key).get<int>();
}
void get_if(const json& j, const char* key, bool& out) {
    if (j.contains(key)) out = j.at(key).get<bool>();
}
void get_if(const json& j, const char* key, uint64_t& out) {
    if (j.contains(key)) out = j.at(key).get<uint64_t>();
}

}  // namespace

EpisodeConfig episode_config_from_json_text(const std::string& text, const std::string& base_dir) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw std::invalid_argument(std::string("episode config: invalid JSON: ") + e.what());
    }
    if (!j.contains("format") || j["format"] != "mgprl-episode/1")
        throw std::invalid_argument("episode config: missing or unsupported 'format'");

    EpisodeConfig cfg;
    if (!j.contains("world"))
        throw std::invalid_argument("episode config: missing key 'world'");
    if (j["world"].is_string()) {
        cfg.world_path = j["world"].get<std::string>();
        fs::path p = cfg.world_path;
        if (p.is_relative() && !base_dir.empty()) p = fs::path(base_dir) / p;
        cfg.world = load_world(p.string());
    } else if (j["world"].is_object()) {
        cfg.world = world_from_json_text(j["world"].dump());
    } else {
        throw std::invalid_argument("episode config: 'world' must be a path or an object");
    }

    if (!j.contains("robots") || !j["robots"].is_array() || j["robots"].size() < 2)
        throw std::invalid_argument("episode config: 'robots' must list at least 2 starts");
    for (const auto& r : j["robots"]) {
        if (!r.contains("x") || !r.contains("y"))
            throw std::invalid_argument("episode config: robots[].x/.y required");
        const double yaw_deg = r.contains("yaw_deg") ? r["yaw_deg"].get<double>() : 0.0;
        cfg.robot_starts.emplace_back(r["x"].get<double>(), r["y"].get<double>(),
                                      yaw_deg * M_PI / 180.0);
    }

    if (j.contains("sampling")) {
        const auto& s = j["sampling"];
        get_if(s, "initial_samples", cfg.initial_samples);
        get_if(s, "samples_per_cycle", cfg.samples_per_cycle);
        get_if(s, "cycles", cfg.cycles);
        get_if(s, "noise_level_db", cfg.noise_level);
        get_if(s, "ap_dropout", cfg.ap_dropout);
    }
    if (j.contains("hierarchy")) {
        const auto& h = j["hierarchy"];
        get_if(h, "levels", cfg.hierarchy_levels);
        get_if(h, "coarse_cell_m", cfg.coarse_cell);
        get_if(h, "refinement_factor", cfg.refinement_factor);
        get_if(h, "neighborhood_radius", cfg.neighborhood_radius);
        get_if(h, "bounds_padding_m", cfg.bounds_padding);
        get_if(h, "coverage_radius_m", cfg.coverage_radius);
    }
    if (j.contains("weighting")) {
        const auto& w = j["weighting"];
        get_if(w, "epsilon", cfg.weighting.epsilon);
        get_if(w, "alpha", cfg.weighting.alpha);
        get_if(w, "scale_by_maxima_count", cfg.weighting.scale_by_maxima_count);
        get_if(w, "rssi_closeness_db", cfg.rssi_closeness_db);
    }
    if (j.contains("alignment")) {
        const auto& a = j["alignment"];
        get_if(a, "lambda_m2", cfg.alignment.lambda);
        get_if(a, "max_candidate_combinations", cfg.alignment.max_candidate_combinations);
        get_if(a, "reflection_allowed", cfg.alignment.reflection_allowed);
        get_if(a, "normalize_error_by_count", cfg.alignment.normalize_error_by_count);
        get_if(a, "hierarchical_only", cfg.alignment.hierarchical_only);
    }
    if (j.contains("fit")) {
        const auto& f = j["fit"];
        get_if(f, "restarts", cfg.fit.restarts);
        get_if(f, "update_restarts", cfg.fit.update_restarts);
        get_if(f, "max_iters", cfg.fit.max_iters);
        get_if(f, "learning_rate", cfg.fit.learning_rate);
        get_if(f, "use_gradients", cfg.fit.use_gradients);
        get_if(f, "coreg_rank", cfg.fit.coreg_rank);
        get_if(f, "refit_cadence", cfg.fit.refit_cadence);
    }
    if (j.contains("walk")) {
        const auto& w = j["walk"];
        get_if(w, "step_m", cfg.walk_step);
        double deg = cfg.walk_max_turn * 180.0 / M_PI;
        get_if(w, "max_turn_deg", deg);
        cfg.walk_max_turn = deg * M_PI / 180.0;
    }
    if (j.contains("output")) get_if(j["output"], "snapshot_stride", cfg.snapshot_stride);
    get_if(j, "master_seed", cfg.master_seed);
    return cfg;
}

EpisodeConfig load_episode_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("episode config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return episode_config_from_json_text(ss.str(), fs::path(path).parent_path().string());
}

std::string episode_config_to_json_text(const EpisodeConfig& cfg) {
    json j;
    j["format"] = "mgprl-episode/1";
    if (cfg.world) j["world"] = json::parse(world_to_json_text(*cfg.world));
    j["robots"] = json::array();
    for (const auto& r : cfg.robot_starts)
        j["robots"].push_back({{"x", r.x}, {"y", r.y}, {"yaw_deg", r.yaw * 180.0 / M_PI}});
    j["sampling"] = {{"initial_samples", cfg.initial_samples},
                     {"samples_per_cycle", cfg.samples_per_cycle},
                     {"cycles", cfg.cycles},
                     {"noise_level_db", cfg.noise_level},
                     {"ap_dropout", cfg.ap_dropout}};
    j["hierarchy"] = {{"levels", cfg.hierarchy_levels},
                      {"coarse_cell_m", cfg.coarse_cell},
                      {"refinement_factor", cfg.refinement_factor},
                      {"neighborhood_radius", cfg.neighborhood_radius},
                      {"bounds_padding_m", cfg.bounds_padding},
                      {"coverage_radius_m", cfg.coverage_radius}};
    j["weighting"] = {{"epsilon", cfg.weighting.epsilon},
                      {"alpha", cfg.weighting.alpha},
                      {"scale_by_maxima_count", cfg.weighting.scale_by_maxima_count},
                      {"rssi_closeness_db", cfg.rssi_closeness_db}};
    j["alignment"] = {{"lambda_m2", cfg.alignment.lambda},
                      {"max_candidate_combinations", cfg.alignment.max_candidate_combinations},
                      {"reflection_allowed", cfg.alignment.reflection_allowed},
                      {"normalize_error_by_count", cfg.alignment.normalize_error_by_count},
                      {"hierarchical_only", cfg.alignment.hierarchical_only}};
    j["fit"] = {{"restarts", cfg.fit.restarts},
                {"update_restarts", cfg.fit.update_restarts},
                {"max_iters", cfg.fit.max_iters},
                {"learning_rate", cfg.fit.learning_rate},
                {"use_gradients", cfg.fit.use_gradients},
                {"coreg_rank", cfg.fit.coreg_rank},
                {"refit_cadence", cfg.fit.refit_cadence}};
    j["walk"] = {{"step_m", cfg.walk_step}, {"max_turn_deg", cfg.walk_max_turn * 180.0 / M_PI}};
    j["output"] = {{"snapshot_stride", cfg.snapshot_stride}};
    j["master_seed"] = cfg.master_seed;
    return j.dump(2) + "\n";
}

std::string apply_config_override(const std::string& config_text, const std::string& key_eq_value) {
    const auto eq = key_eq_value.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument("override '" + key_eq_value + "' is not key=value");
    const std::string key = key_eq_value.substr(0, eq);
    const std::string value = key_eq_value.substr(eq + 1);

    json j = json::parse(config_text);

    // Robot-count override truncates the configured start list.
    if (key == "robots") {
        const int count = std::stoi(value);
        if (!j.contains("robots") || !j["robots"].is_array() ||
            static_cast<int>(j["robots"].size()) < count || count < 2)
            throw std::invalid_argument("override 'robots': config lists fewer than " + value +
                                        " starts (or count < 2)");
        json trimmed = json::array();
        for (int i = 0; i < count; ++i) trimmed.push_back(j["robots"][static_cast<size_t>(i)]);
        j["robots"] = std::move(trimmed);
        return j.dump(2);
    }

    json* cur = &j;
    std::istringstream ss(key);
    std::string token;
    std::vector<std::string> tokens;
    while (std::getline(ss, token, '.')) tokens.push_back(token);
    for (size_t i = 0; i + 1 < tokens.size(); ++i) {
        if (!cur->contains(tokens[i]))
            throw std::invalid_argument("override: no such config key '" + key + "' (missing '" +
                                        tokens[i] + "')");
        cur = &(*cur)[tokens[i]];
    }
    if (tokens.empty() || !cur->contains(tokens.back()))
        throw std::invalid_argument("override: no such config key '" + key + "'");

    json parsed;
    try {
        parsed = json::parse(value);
    } catch (...) {
        parsed = value;  // plain string
    }
    (*cur)[tokens.back()] = parsed;
    return j.dump(2);
}

}  // namespace mgprl
