// Command-line front end: run episodes, sweep parameters, run the built-in
// oracle selftest, and render plots from an artifact bundle.

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

#include "mgprl/benchmarks.hpp"
#include "mgprl/harness.hpp"
#include "mgprl/selftest.hpp"
#include "mgprl/viz.hpp"

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;
using namespace mgprl;

namespace {

constexpr const char* kToolVersion = "0.1.0";

std::string utc_now_iso() {
    const std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
}

fs::path resolve_out_dir(const std::string& flag_out, const std::string& config_path,
                         uint64_t seed) {
    if (!flag_out.empty()) return flag_out;
    if (const char* env = std::getenv("MGPRL_OUT_DIR"); env && *env) return env;
    return fs::path("out") / (fs::path(config_path).stem().string() + "-seed" +
                              std::to_string(seed));
}

// Loads either an episode config or a manifest (replay); returns the resolved
// config text after overrides plus the base directory for world paths.
std::pair<std::string, std::string> resolve_config_text(
    const std::string& config_path, const std::vector<std::string>& overrides) {
    std::string text = read_text_file(config_path);
    const json probe = json::parse(text, nullptr, true, true);
    if (probe.contains("format") && probe["format"] == "mgprl-manifest/1") {
        if (!probe.contains("episode"))
            throw std::invalid_argument("manifest: missing 'episode' section");
        text = probe["episode"].dump(2);
    }
    for (const auto& ov : overrides) text = apply_config_override(text, ov);
    return {text, fs::path(config_path).parent_path().string()};
}

struct FieldFile {
    int cycle = 0;
    std::string robot;
    std::string ap;
    bool is_mean = false;
    fs::path path;
};

ScalarField load_field_json(const fs::path& path) {
    const json j = json::parse(read_text_file(path.string()));
    if (!j.contains("format") || j["format"] != "mgprl-field/1")
        throw std::invalid_argument("field file '" + path.string() + "': unsupported format");
    const auto& g = j["grid"];
    GridSpec grid({g["origin_x"].get<double>(), g["origin_y"].get<double>()},
                  g["cell_size"].get<double>(), g["width"].get<int>(), g["height"].get<int>());
    ScalarField f(grid);
    f.values = j["values"].get<std::vector<double>>();
    f.check_finite();
    return f;
}

std::optional<FieldFile> parse_field_name(const fs::path& path) {
    std::string stem = path.stem().string();
    FieldFile out;
    out.path = path;
    if (stem.rfind("cycle", 0) != 0) return std::nullopt;
    if (stem.size() > 5 && stem.substr(stem.size() - 5) == "_mean") {
        out.is_mean = true;
        stem = stem.substr(0, stem.size() - 5);
    } else if (stem.size() > 4 && stem.substr(stem.size() - 4) == "_var") {
        out.is_mean = false;
        stem = stem.substr(0, stem.size() - 4);
    } else {
        return std::nullopt;
    }
    const auto first = stem.find('_');
    if (first == std::string::npos) return std::nullopt;
    out.cycle = std::atoi(stem.substr(5, first - 5).c_str());
    const auto second = stem.find('_', first + 1);
    if (second == std::string::npos) return std::nullopt;
    out.robot = stem.substr(first + 1, second - first - 1);
    out.ap = stem.substr(second + 1);
    return out;
}

// Renders heatmaps, fused fields, hull overlays and metric curves from a
// bundle. Pure function of the bundle contents.
void render_bundle(const fs::path& bundle, const fs::path& out_dir) {
    const fs::path metrics_path = bundle / "metrics.csv";
    const fs::path fields_dir = bundle / "fields";
    if (!fs::exists(metrics_path) || !fs::exists(fields_dir))
        throw std::invalid_argument("bundle '" + bundle.string() +
                                    "' is missing metrics.csv or fields/");
    std::vector<FieldFile> fields;
    for (const auto& e : fs::directory_iterator(fields_dir))
        if (auto f = parse_field_name(e.path())) fields.push_back(*f);
    if (fields.empty())
        throw std::invalid_argument("bundle '" + bundle.string() + "' has no field snapshots");
    std::sort(fields.begin(), fields.end(), [](const FieldFile& a, const FieldFile& b) {
        return std::tie(a.cycle, a.robot, a.ap, a.is_mean) <
               std::tie(b.cycle, b.robot, b.ap, b.is_mean);
    });

    fs::create_directories(out_dir);

    // Heatmaps from the last snapshot cycle; fused field per robot.
    const int last_cycle = fields.back().cycle;
    std::map<std::string, ScalarField> fused;  // robot -> cellwise max of mean fields
    for (const auto& f : fields) {
        if (f.cycle != last_cycle) continue;
        const ScalarField field = load_field_json(f.path);
        write_ppm(render_heatmap(field),
                  out_dir / ("field_" + f.robot + "_" + f.ap + (f.is_mean ? "_mean" : "_var") +
                             ".ppm"));
        if (f.is_mean) {
            auto it = fused.find(f.robot);
            if (it == fused.end()) {
                fused.emplace(f.robot, field);
            } else {
                for (size_t k = 0; k < field.values.size(); ++k)
                    it->second.values[k] = std::max(it->second.values[k], field.values[k]);
            }
        }
    }
    for (const auto& [robot, field] : fused)
        write_ppm(render_heatmap(field), out_dir / ("fused_" + robot + ".ppm"));

    // Metric curves averaged over robots per cycle.
    {
        std::ifstream in(metrics_path);
        std::string line;
        std::getline(in, line);  // header
        std::map<int, std::array<std::pair<double, int>, 4>> acc;  // cycle -> (sum, count) x metric
        while (std::getline(in, line)) {
            std::stringstream ss(line);
            std::string cell;
            std::vector<std::string> cells;
            while (std::getline(ss, cell, ',')) cells.push_back(cell);
            if (cells.size() < 9) continue;
            const int cycle = std::atoi(cells[0].c_str());
            const char* names[4] = {"ale_ap", "ale_r", "rmse", "uncertainty"};
            (void)names;
            const int idx[4] = {3, 4, 5, 6};
            for (int k = 0; k < 4; ++k) {
                if (cells[static_cast<size_t>(idx[k])].empty()) continue;
                acc[cycle][static_cast<size_t>(k)].first +=
                    std::atof(cells[static_cast<size_t>(idx[k])].c_str());
                acc[cycle][static_cast<size_t>(k)].second += 1;
            }
        }
        CurveSeries ale_ap{"ale_ap_m", {}}, ale_r{"ale_r_m", {}}, rmse{"rmse_db", {}},
            unc{"uncertainty_db", {}};
        for (const auto& [cycle, sums] : acc) {
            const auto value = [&](int k) {
                return sums[static_cast<size_t>(k)].second
                           ? sums[static_cast<size_t>(k)].first / sums[static_cast<size_t>(k)].second
                           : std::numeric_limits<double>::quiet_NaN();
            };
            ale_ap.values.push_back(value(0));
            ale_r.values.push_back(value(1));
            rmse.values.push_back(value(2));
            unc.values.push_back(value(3));
        }
        write_ppm(render_curves({ale_ap, ale_r}), out_dir / "curves_ale.ppm");
        write_ppm(render_curves({rmse}), out_dir / "curves_rmse.ppm");
        write_ppm(render_curves({unc}), out_dir / "curves_uncertainty.ppm");
    }

    // Hull overlays from the final beliefs and alignments, when present.
    const fs::path beliefs_dir = bundle / "beliefs";
    const fs::path align_path = bundle / "alignments.jsonl";
    if (fs::exists(beliefs_dir) && fs::exists(align_path)) {
        std::map<std::string, RobotBeliefMsg> last_belief;
        std::vector<fs::path> belief_files;
        for (const auto& e : fs::directory_iterator(beliefs_dir)) belief_files.push_back(e.path());
        std::sort(belief_files.begin(), belief_files.end());
        for (const auto& p : belief_files) {
            std::ifstream in(p);
            std::string line, last;
            while (std::getline(in, line))
                if (!line.empty()) last = line;
            if (last.empty()) continue;
            const RobotBeliefMsg msg = belief_from_json_text(last);
            last_belief[msg.robot_id] = msg;
        }
        std::ifstream in(align_path);
        std::string line;
        std::map<std::pair<std::string, std::string>, json> last_align;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const json j = json::parse(line);
            last_align[{j["a"].get<std::string>(), j["b"].get<std::string>()}] = j;
        }
        for (const auto& [pair, j] : last_align) {
            const auto ita = last_belief.find(pair.first);
            const auto itb = last_belief.find(pair.second);
            if (ita == last_belief.end() || itb == last_belief.end()) continue;
            const Transform2D t{j["rotation_rad"].get<double>(),
                                {j["tx_m"].get<double>(), j["ty_m"].get<double>()}};
            std::vector<OverlayPoint> pts;
            std::vector<Vec2> hull_a_pts, hull_b_pts;
            Vec2 lo{1e300, 1e300}, hi{-1e300, -1e300};
            const auto extend = [&](const Vec2& p) {
                lo.x = std::min(lo.x, p.x - 1.0);
                lo.y = std::min(lo.y, p.y - 1.0);
                hi.x = std::max(hi.x, p.x + 1.0);
                hi.y = std::max(hi.y, p.y + 1.0);
            };
            for (const auto& e : ita->second.estimates) {
                pts.push_back({e.position, 0, e.kind == ApEstimate::Kind::hierarchical});
                if (e.kind == ApEstimate::Kind::hierarchical) hull_a_pts.push_back(e.position);
                extend(e.position);
            }
            for (const auto& e : itb->second.estimates) {
                const Vec2 mapped = apply(t, e.position);
                pts.push_back({mapped, 1, e.kind == ApEstimate::Kind::hierarchical});
                if (e.kind == ApEstimate::Kind::hierarchical) hull_b_pts.push_back(mapped);
                extend(mapped);
            }
            std::vector<std::vector<Vec2>> hulls;
            if (hull_a_pts.size() >= 2) hulls.push_back(convex_hull(hull_a_pts));
            if (hull_b_pts.size() >= 2) hulls.push_back(convex_hull(hull_b_pts));
            write_ppm(render_overlay(pts, hulls, lo, hi),
                      out_dir / ("hulls_" + pair.first + "_" + pair.second + ".ppm"));
        }
    }
}

int cmd_run(const std::string& config_path, const std::string& out_flag,
            const std::vector<std::string>& overrides, std::optional<uint64_t> seed_flag,
            bool render) {
    const auto [text, base_dir] = resolve_config_text(config_path, overrides);
    EpisodeConfig cfg = episode_config_from_json_text(text, base_dir);
    if (seed_flag) cfg.master_seed = *seed_flag;

    const fs::path out_dir = resolve_out_dir(out_flag, config_path, cfg.master_seed);
    fs::create_directories(out_dir);

    // Manifest goes to disk before the long computation starts.
    json manifest;
    manifest["format"] = "mgprl-manifest/1";
    manifest["tool_version"] = kToolVersion;
    manifest["created_utc"] = utc_now_iso();
    manifest["config_path"] = config_path;
    manifest["overrides"] = overrides;
    manifest["resolved_seed"] = cfg.master_seed;
    manifest["out_dir"] = out_dir.string();
    manifest["episode"] = json::parse(episode_config_to_json_text(cfg));
    write_text_file(out_dir / "manifest.json", manifest.dump(2) + "\n");

    const EpisodeResult result = run_episode(cfg, out_dir.string());
    if (render) render_bundle(out_dir, out_dir / "plots");

    manifest["finished_utc"] = utc_now_iso();
    write_text_file(out_dir / "manifest.json", manifest.dump(2) + "\n");

    std::cout << "episode finished: " << result.records.size() << " metric rows -> "
              << out_dir.string() << "\n"
              << "  final ale_ap = " << result.summary.final_ale_ap
              << " m, ale_r = " << result.summary.final_ale_r
              << " m, rmse = " << result.summary.final_rmse_db
              << " dB, accept rate = " << result.summary.final_accept_rate << "\n";
    return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& out_flag,
              const std::vector<std::string>& overrides, const std::string& axis,
              const std::vector<double>& values, int seeds, uint64_t base_seed, int jobs) {
    if (values.empty()) throw std::invalid_argument("sweep: no axis values given");
    if (seeds < 1) throw std::invalid_argument("sweep: seeds must be >= 1");

    const auto [base_text, base_dir] = resolve_config_text(config_path, overrides);

    struct Job {
        double value;
        uint64_t seed;
        EpisodeConfig cfg;
    };
    std::vector<Job> jobs_list;
    for (const double v : values) {
        std::ostringstream val;
        if (axis == "robots" || v == std::floor(v))
            val << static_cast<long long>(v);
        else
            val << v;
        const std::string text = apply_config_override(base_text, axis + "=" + val.str());
        for (int s = 0; s < seeds; ++s) {
            Job job;
            job.value = v;
            job.seed = base_seed + static_cast<uint64_t>(s);
            job.cfg = episode_config_from_json_text(text, base_dir);
            job.cfg.master_seed = job.seed;
            jobs_list.push_back(std::move(job));
        }
    }

    std::vector<EpisodeSummary> summaries(jobs_list.size());
    std::atomic<size_t> next{0};
    const int workers = std::max(1, jobs);
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            while (true) {
                const size_t k = next.fetch_add(1);
                if (k >= jobs_list.size()) return;
                summaries[k] = run_episode(jobs_list[k].cfg).summary;
            }
        });
    }
    for (auto& t : pool) t.join();

    const fs::path out_dir = resolve_out_dir(out_flag, config_path, base_seed);
    fs::create_directories(out_dir);

    std::ostringstream raw;
    raw << "axis,value,seed,ale_ap_m,ale_r_m,field_rmse_db,mean_uncertainty_db,accept_rate\n";
    for (size_t k = 0; k < jobs_list.size(); ++k) {
        const auto& s = summaries[k];
        raw << axis << ',' << jobs_list[k].value << ',' << jobs_list[k].seed << ',' << s.final_ale_ap
            << ',' << s.final_ale_r << ',' << s.final_rmse_db << ',' << s.final_uncertainty_db
            << ',' << s.final_accept_rate << '\n';
    }
    write_text_file(out_dir / "sweep_raw.csv", raw.str());

    std::ostringstream agg;
    agg << "axis,value,episodes,ale_ap_mean,ale_ap_std,ale_r_mean,ale_r_std,rmse_mean,rmse_std,"
           "uncertainty_mean,uncertainty_std,accept_rate_mean\n";
    for (const double v : values) {
        std::vector<const EpisodeSummary*> group;
        for (size_t k = 0; k < jobs_list.size(); ++k)
            if (jobs_list[k].value == v) group.push_back(&summaries[k]);
        const auto stats = [&](auto getter) {
            double mean = 0.0;
            int n = 0;
            for (const auto* s : group) {
                const double x = getter(*s);
                if (std::isfinite(x)) {
                    mean += x;
                    ++n;
                }
            }
            mean = n ? mean / n : std::numeric_limits<double>::quiet_NaN();
            double var = 0.0;
            for (const auto* s : group) {
                const double x = getter(*s);
                if (std::isfinite(x)) var += (x - mean) * (x - mean);
            }
            return std::pair<double, double>{mean, n > 1 ? std::sqrt(var / (n - 1)) : 0.0};
        };
        const auto ale_ap = stats([](const EpisodeSummary& s) { return s.final_ale_ap; });
        const auto ale_r = stats([](const EpisodeSummary& s) { return s.final_ale_r; });
        const auto rmse = stats([](const EpisodeSummary& s) { return s.final_rmse_db; });
        const auto unc = stats([](const EpisodeSummary& s) { return s.final_uncertainty_db; });
        const auto acc = stats([](const EpisodeSummary& s) { return s.final_accept_rate; });
        agg << axis << ',' << v << ',' << group.size() << ',' << ale_ap.first << ','
            << ale_ap.second << ',' << ale_r.first << ',' << ale_r.second << ',' << rmse.first
            << ',' << rmse.second << ',' << unc.first << ',' << unc.second << ',' << acc.first
            << '\n';
    }
    write_text_file(out_dir / "sweep_summary.csv", agg.str());

    std::cout << "sweep finished: " << jobs_list.size() << " episodes -> " << out_dir.string()
              << "\n";
    return 0;
}

int cmd_selftest(const std::string& fault_name) {
    const SelftestReport report = run_selftest(fault_from_name(fault_name));
    std::cout << "suite                      result  detail\n";
    for (const auto& e : report.entries) {
        std::cout << e.name;
        for (size_t k = e.name.size(); k < 27; ++k) std::cout << ' ';
        std::cout << (e.passed ? "PASS" : "FAIL") << "    " << e.detail << "\n";
    }
    return report.all_passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"co-regionalized GP RSSI mapping and convex-hull relative localization"};
    app.set_version_flag("--version", std::string("mgprl ") + kToolVersion);
    app.require_subcommand(1);

    std::string config, out, bundle, axis = "sampling.noise_level_db", fault;
    std::vector<std::string> overrides;
    std::vector<double> values;
    uint64_t seed = 0, sweep_seed = 1;
    bool seed_set = false;
    int seeds = 5, jobs = 1;
    bool no_plots = false;

    auto* run = app.add_subcommand("run", "run one episode from a config or manifest");
    run->add_option("--config", config, "episode config or manifest JSON")->required();
    run->add_option("--out", out, "output bundle directory (default $MGPRL_OUT_DIR or ./out/...)");
    run->add_option("--seed", seed, "override the master seed")->each([&](const std::string&) {
        seed_set = true;
    });
    run->add_option("--override", overrides, "dotted.key=value config override (repeatable)");
    run->add_flag("--no-plots", no_plots, "skip image rendering");

    auto* sweep = app.add_subcommand("sweep", "run one episode per (axis value, seed)");
    sweep->add_option("--config", config, "episode config JSON")->required();
    sweep->add_option("--axis", axis, "dotted config key to vary (or 'robots')");
    sweep->add_option("--values", values, "axis values")->required();
    sweep->add_option("--seeds", seeds, "seeds per value");
    sweep->add_option("--seed", sweep_seed, "base master seed");
    sweep->add_option("--out", out, "output directory");
    sweep->add_option("--jobs", jobs, "worker pool size");
    sweep->add_option("--override", overrides, "applied before the axis override");

    auto* selftest = app.add_subcommand("selftest", "run the built-in oracle suites");
    selftest->add_option("--inject-fault", fault,
                         "test hook: gp_mean_bias, align_rotation_bias or maxima_drop");

    auto* plot = app.add_subcommand("plot", "render images from an artifact bundle");
    plot->add_option("--bundle", bundle, "bundle directory from 'run'")->required();
    plot->add_option("--out", out, "image output directory (default <bundle>/plots)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed())
            return cmd_run(config, out, overrides,
                           seed_set ? std::optional<uint64_t>(seed) : std::nullopt, !no_plots);
        if (sweep->parsed())
            return cmd_sweep(config, out, overrides, axis, values, seeds, sweep_seed, jobs);
        if (selftest->parsed()) return cmd_selftest(fault);
        if (plot->parsed()) {
            render_bundle(bundle, out.empty() ? fs::path(bundle) / "plots" : fs::path(out));
            std::cout << "plots written\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
