// Planar geometry and gridded field types shared by every module.

#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace mgprl {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2() = default;
    Vec2(double x_, double y_) : x(x_), y(y_) {}

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double dot(const Vec2& o) const { return x * o.x + y * o.y; }
    double cross(const Vec2& o) const { return x * o.y - y * o.x; }
    double norm() const { return std::hypot(x, y); }
    double squared_norm() const { return x * x + y * y; }
};

inline double distance(const Vec2& a, const Vec2& b) { return (a - b).norm(); }

// Normalizes an angle into (-pi, pi].
double normalize_angle(double rad);

// Planar robot pose; yaw is kept normalized to (-pi, pi].
struct Pose2D {
    double x = 0.0;
    double y = 0.0;
    double yaw = 0.0;

    Pose2D() = default;
    Pose2D(double x_, double y_, double yaw_) : x(x_), y(y_), yaw(normalize_angle(yaw_)) {}

    Vec2 position() const { return {x, y}; }
};

// Proper rigid transform on the plane: p' = R(rotation) * p + translation.
struct Transform2D {
    double rotation = 0.0;  // radians, normalized to (-pi, pi]
    Vec2 translation;

    Transform2D() = default;
    Transform2D(double rot, Vec2 t) : rotation(normalize_angle(rot)), translation(t) {}

    static Transform2D identity() { return {}; }
    static Transform2D from_pose(const Pose2D& p) { return {p.yaw, {p.x, p.y}}; }

    Transform2D inverse() const;
};

Vec2 apply(const Transform2D& t, const Vec2& p);

// compose(a, b): applying the result equals applying b first, then a.
Transform2D compose(const Transform2D& a, const Transform2D& b);

// Translation-norm + rotation deviation of a transform from identity.
double deviation_from_identity(const Transform2D& t);

// Uniform grid over a rectangle. origin is the lower-left corner of cell
// (0, 0); cell (i, j) covers [origin.x + i*cell, origin.x + (i+1)*cell) etc.
struct GridSpec {
    Vec2 origin;
    double cell_size = 1.0;
    int width = 2;
    int height = 2;

    GridSpec() = default;
    GridSpec(Vec2 origin_, double cell_size_, int width_, int height_);

    int cell_count() const { return width * height; }
    bool in_range(int i, int j) const { return i >= 0 && i < width && j >= 0 && j < height; }

    // Linear index of cell (i, j); row-major with j (row) outermost, so the
    // lowest index under a scan is the lowest-(row, col) cell.
    int index(int i, int j) const { return j * width + i; }

    // Cell indices containing a metric point, clamped onto the grid.
    std::pair<int, int> clamped_cell_of(const Vec2& p) const;

    double extent_x() const { return width * cell_size; }
    double extent_y() const { return height * cell_size; }
};

// Metric center of cell (i, j); throws std::out_of_range when off-grid.
Vec2 grid_cell_center(const GridSpec& g, int i, int j);

// A real-valued field sampled on a grid, stored row-major (index j*width+i).
struct ScalarField {
    GridSpec grid;
    std::vector<double> values;

    ScalarField() = default;
    explicit ScalarField(const GridSpec& g, double fill = 0.0)
        : grid(g), values(static_cast<size_t>(g.cell_count()), fill) {}

    double& at(int i, int j) { return values[static_cast<size_t>(grid.index(i, j))]; }
    double at(int i, int j) const { return values[static_cast<size_t>(grid.index(i, j))]; }

    // Index of the maximum cell; ties keep the lowest (row, col) index.
    std::pair<int, int> argmax_cell() const;
    double max_value() const;

    void check_finite() const;
};

// Bilinear interpolation of a field at a metric point. Points outside the
// grid clamp to the border cells.
double bilinear_sample(const ScalarField& f, const Vec2& p);

}  // namespace mgprl
