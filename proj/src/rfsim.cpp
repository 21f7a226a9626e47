#include "mgprl/rfsim.hpp"

#include <Eigen/Dense>
#include <fstream>
#include <json.hpp>
#include <sstream>

using json = nlohmann::ordered_json;

namespace mgprl {

void PathLossParams::validate() const {
    if (!(ref_distance > 0.0)) throw std::invalid_argument("pathloss.ref_distance must be > 0");
    if (exponent < 2.0 || exponent > 4.0)
        throw std::invalid_argument("pathloss.exponent must lie in [2, 4]");
    if (shadowing_sigma < 0.0 || fading_sigma < 0.0)
        throw std::invalid_argument("pathloss sigmas must be >= 0");
    if (shadowing_sigma > 0.0 && !(shadowing_corr_length > 0.0))
        throw std::invalid_argument("pathloss.shadowing_corr_length must be > 0");
    if (!(clamp_distance_fraction > 0.0) || clamp_distance_fraction > 1.0)
        throw std::invalid_argument("pathloss.clamp_distance_fraction must lie in (0, 1]");
}

ScalarField realize_shadowing(const GridSpec& grid, double sigma, double corr_length, Rng& rng) {
    if (sigma < 0.0) throw std::invalid_argument("realize_shadowing: sigma must be >= 0");
    ScalarField field(grid, 0.0);
    if (sigma == 0.0) return field;

    const int n = grid.cell_count();
    Eigen::MatrixXd cov(n, n);
    std::vector<Vec2> centers(static_cast<size_t>(n));
    for (int j = 0; j < grid.height; ++j)
        for (int i = 0; i < grid.width; ++i)
            centers[static_cast<size_t>(grid.index(i, j))] = grid_cell_center(grid, i, j);
    const double inv2l2 = 1.0 / (2.0 * corr_length * corr_length);
    for (int a = 0; a < n; ++a) {
        for (int b = a; b < n; ++b) {
            const double d2 = (centers[a] - centers[b]).squared_norm();
            const double c = sigma * sigma * std::exp(-d2 * inv2l2);
            cov(a, b) = c;
            cov(b, a) = c;
        }
    }

    // SE covariances on dense grids are near-singular, so sample through the
    // eigendecomposition with negative eigenvalues clamped instead of a
    // Cholesky factor.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    Eigen::VectorXd scale = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    Eigen::VectorXd z(n);
    for (int i = 0; i < n; ++i) z(i) = rng.gaussian();
    Eigen::VectorXd sample = eig.eigenvectors() * scale.cwiseProduct(z);
    for (int i = 0; i < n; ++i) field.values[static_cast<size_t>(i)] = sample(i);
    return field;
}

double ApGroundTruth::shadowing_at(const Vec2& x) const {
    if (shadowing.values.empty()) return 0.0;
    return bilinear_sample(shadowing, x);
}

double mean_rssi(const ApGroundTruth& ap, const Vec2& x) {
    const double d = std::max(distance(x, ap.position), ap.params.clamp_distance());
    return ap.params.ref_power_dbm -
           10.0 * ap.params.exponent * std::log10(d / ap.params.ref_distance) +
           ap.shadowing_at(x);
}

RssiSample sample_measurement(const ApGroundTruth& ap, const Vec2& x, double noise_sigma, Rng& rng) {
    if (noise_sigma < 0.0) throw std::invalid_argument("sample_measurement: noise_sigma must be >= 0");
    double v = mean_rssi(ap, x);
    if (ap.params.fading_sigma > 0.0) v += rng.gaussian(0.0, ap.params.fading_sigma);
    if (noise_sigma > 0.0) v += rng.gaussian(0.0, noise_sigma);
    return {x, ap.ap_id, v};
}

GridSpec World::grid() const {
    const int w = std::max(2, static_cast<int>(std::ceil((max_corner.x - min_corner.x) / grid_cell_size)));
    const int h = std::max(2, static_cast<int>(std::ceil((max_corner.y - min_corner.y) / grid_cell_size)));
    return {min_corner, grid_cell_size, w, h};
}

const ApGroundTruth& World::ap(const std::string& id) const {
    for (const auto& a : aps)
        if (a.ap_id == id) return a;
    throw std::out_of_range("World: unknown AP id '" + id + "'");
}

bool World::contains(const Vec2& p) const {
    return p.x >= min_corner.x && p.x <= max_corner.x && p.y >= min_corner.y && p.y <= max_corner.y;
}

World build_world(Vec2 min_corner, Vec2 max_corner, double grid_cell_size,
                  const std::vector<std::pair<std::string, Vec2>>& ap_list,
                  const PathLossParams& params, uint64_t seed) {
    if (!(max_corner.x > min_corner.x) || !(max_corner.y > min_corner.y))
        throw std::invalid_argument("world bounds: max corner must exceed min corner");
    if (!(grid_cell_size > 0.0)) throw std::invalid_argument("world.grid_cell_size must be > 0");
    params.validate();

    World w;
    w.min_corner = min_corner;
    w.max_corner = max_corner;
    w.grid_cell_size = grid_cell_size;
    w.seed = seed;
    const GridSpec grid = w.grid();
    uint64_t ap_index = 0;
    for (const auto& [id, pos] : ap_list) {
        for (const auto& existing : w.aps)
            if (existing.ap_id == id)
                throw std::invalid_argument("world.aps: duplicate AP id '" + id + "'");
        ApGroundTruth ap;
        ap.ap_id = id;
        ap.position = pos;
        ap.params = params;
        if (params.shadowing_sigma > 0.0) {
            Rng stream(derive_seed(seed, "shadowing", ap_index));
            ap.shadowing =
                realize_shadowing(grid, params.shadowing_sigma, params.shadowing_corr_length, stream);
        }
        w.aps.push_back(std::move(ap));
        ++ap_index;
    }
    return w;
}

namespace {

double require_number(const json& j, const std::string& key_path) {
    const json* cur = &j;
    std::string token;
    std::istringstream ss(key_path);
    while (std::getline(ss, token, '.')) {
        if (!cur->contains(token))
            throw std::invalid_argument("world file: missing key '" + key_path + "'");
        cur = &(*cur)[token];
    }
    if (!cur->is_number())
        throw std::invalid_argument("world file: key '" + key_path + "' must be a number");
    return cur->get<double>();
}

}  // namespace

World world_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw std::invalid_argument(std::string("world file: invalid JSON: ") + e.what());
    }
    if (!j.contains("format") || j["format"] != "mgprl-world/1")
        throw std::invalid_argument("world file: missing or unsupported 'format' (expected mgprl-world/1)");

    PathLossParams params;
    params.ref_power_dbm = require_number(j, "pathloss.ref_power_dbm");
    params.ref_distance = require_number(j, "pathloss.ref_distance_m");
    params.exponent = require_number(j, "pathloss.exponent");
    params.shadowing_sigma = require_number(j, "pathloss.shadowing_sigma_db");
    params.shadowing_corr_length = require_number(j, "pathloss.shadowing_corr_length_m");
    params.fading_sigma = require_number(j, "pathloss.fading_sigma_db");
    if (j["pathloss"].contains("clamp_distance_fraction"))
        params.clamp_distance_fraction = j["pathloss"]["clamp_distance_fraction"].get<double>();

    std::vector<std::pair<std::string, Vec2>> ap_list;
    if (!j.contains("aps") || !j["aps"].is_array() || j["aps"].empty())
        throw std::invalid_argument("world file: 'aps' must be a non-empty array");
    size_t idx = 0;
    for (const auto& a : j["aps"]) {
        const std::string where = "aps[" + std::to_string(idx) + "]";
        if (!a.contains("id") || !a["id"].is_string())
            throw std::invalid_argument("world file: " + where + ".id must be a string");
        if (!a.contains("x") || !a["x"].is_number() || !a.contains("y") || !a["y"].is_number())
            throw std::invalid_argument("world file: " + where + ".x/.y must be numbers");
        ap_list.emplace_back(a["id"].get<std::string>(),
                             Vec2{a["x"].get<double>(), a["y"].get<double>()});
        ++idx;
    }

    const uint64_t seed = j.contains("seed") ? j["seed"].get<uint64_t>() : 0;
    return build_world({require_number(j, "bounds.xmin"), require_number(j, "bounds.ymin")},
                       {require_number(j, "bounds.xmax"), require_number(j, "bounds.ymax")},
                       require_number(j, "grid.cell_size_m"), ap_list, params, seed);
}

World load_world(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("world file: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return world_from_json_text(ss.str());
}

std::string world_to_json_text(const World& w) {
    const PathLossParams& p = w.aps.empty() ? PathLossParams{} : w.aps.front().params;
    json j;
    j["format"] = "mgprl-world/1";
    j["bounds"] = {{"xmin", w.min_corner.x},
                   {"ymin", w.min_corner.y},
                   {"xmax", w.max_corner.x},
                   {"ymax", w.max_corner.y}};
    j["grid"] = {{"cell_size_m", w.grid_cell_size}};
    j["pathloss"] = {{"ref_power_dbm", p.ref_power_dbm},
                     {"ref_distance_m", p.ref_distance},
                     {"exponent", p.exponent},
                     {"shadowing_sigma_db", p.shadowing_sigma},
                     {"shadowing_corr_length_m", p.shadowing_corr_length},
                     {"fading_sigma_db", p.fading_sigma},
                     {"clamp_distance_fraction", p.clamp_distance_fraction}};
    j["aps"] = json::array();
    for (const auto& ap : w.aps)
        j["aps"].push_back({{"id", ap.ap_id}, {"x", ap.position.x}, {"y", ap.position.y}});
    j["seed"] = w.seed;
    return j.dump(2) + "\n";
}

void save_world(const World& w, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("world file: cannot write '" + path + "'");
    out << world_to_json_text(w);
}

}  // namespace mgprl
