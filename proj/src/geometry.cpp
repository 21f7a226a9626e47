#include "mgprl/geometry.hpp"

#include <algorithm>
#include <limits>

namespace mgprl {

double normalize_angle(double rad) {
    if (!std::isfinite(rad)) throw std::invalid_argument("normalize_angle: non-finite angle");
    double a = std::fmod(rad, 2.0 * M_PI);
    if (a <= -M_PI) a += 2.0 * M_PI;
    if (a > M_PI) a -= 2.0 * M_PI;
    return a;
}

Transform2D Transform2D::inverse() const {
    const double c = std::cos(rotation), s = std::sin(rotation);
    // R^T * (-t)
    return {-rotation, {-(c * translation.x + s * translation.y),
                        -(-s * translation.x + c * translation.y)}};
}

Vec2 apply(const Transform2D& t, const Vec2& p) {
    const double c = std::cos(t.rotation), s = std::sin(t.rotation);
    return {c * p.x - s * p.y + t.translation.x, s * p.x + c * p.y + t.translation.y};
}

Transform2D compose(const Transform2D& a, const Transform2D& b) {
    return {a.rotation + b.rotation, apply(a, b.translation)};
}

double deviation_from_identity(const Transform2D& t) {
    return t.translation.norm();
}

GridSpec::GridSpec(Vec2 origin_, double cell_size_, int width_, int height_)
    : origin(origin_), cell_size(cell_size_), width(width_), height(height_) {
    if (!(cell_size > 0.0)) throw std::invalid_argument("GridSpec: cell_size must be > 0");
    if (width < 2 || height < 2) throw std::invalid_argument("GridSpec: width and height must be >= 2");
}

std::pair<int, int> GridSpec::clamped_cell_of(const Vec2& p) const {
    int i = static_cast<int>(std::floor((p.x - origin.x) / cell_size));
    int j = static_cast<int>(std::floor((p.y - origin.y) / cell_size));
    i = std::clamp(i, 0, width - 1);
    j = std::clamp(j, 0, height - 1);
    return {i, j};
}

Vec2 grid_cell_center(const GridSpec& g, int i, int j) {
    if (!g.in_range(i, j)) throw std::out_of_range("grid_cell_center: cell index out of range");
    return {g.origin.x + (i + 0.5) * g.cell_size, g.origin.y + (j + 0.5) * g.cell_size};
}

std::pair<int, int> ScalarField::argmax_cell() const {
    int best_i = 0, best_j = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < grid.height; ++j) {
        for (int i = 0; i < grid.width; ++i) {
            const double v = at(i, j);
            if (v > best) {
                best = v;
                best_i = i;
                best_j = j;
            }
        }
    }
    return {best_i, best_j};
}

double ScalarField::max_value() const {
    const auto [i, j] = argmax_cell();
    return at(i, j);
}

void ScalarField::check_finite() const {
    if (values.size() != static_cast<size_t>(grid.cell_count()))
        throw std::invalid_argument("ScalarField: value count does not match grid");
    for (double v : values)
        if (!std::isfinite(v)) throw std::invalid_argument("ScalarField: non-finite value");
}

double bilinear_sample(const ScalarField& f, const Vec2& p) {
    const GridSpec& g = f.grid;
    // Work in cell-center coordinates: center of cell (i,j) sits at (i+0.5, j+0.5).
    double u = (p.x - g.origin.x) / g.cell_size - 0.5;
    double v = (p.y - g.origin.y) / g.cell_size - 0.5;
    u = std::clamp(u, 0.0, static_cast<double>(g.width - 1));
    v = std::clamp(v, 0.0, static_cast<double>(g.height - 1));
    const int i0 = std::min(static_cast<int>(std::floor(u)), g.width - 2 >= 0 ? g.width - 2 : 0);
    const int j0 = std::min(static_cast<int>(std::floor(v)), g.height - 2 >= 0 ? g.height - 2 : 0);
    const int i1 = std::min(i0 + 1, g.width - 1);
    const int j1 = std::min(j0 + 1, g.height - 1);
    const double fu = u - i0, fv = v - j0;
    const double a = f.at(i0, j0) * (1 - fu) + f.at(i1, j0) * fu;
    const double b = f.at(i0, j1) * (1 - fu) + f.at(i1, j1) * fu;
    return a * (1 - fv) + b * fv;
}

}  // namespace mgprl
