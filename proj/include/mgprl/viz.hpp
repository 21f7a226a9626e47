// Minimal deterministic rasterization for the plot command: field heatmaps,
// metric curves and hull overlays written as binary PPM.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mgprl/geometry.hpp"

namespace mgprl {

struct Image {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> rgb;  // row-major, top row first

    Image(int w, int h, uint8_t fill = 255)
        : width(w), height(h), rgb(static_cast<size_t>(w) * h * 3, fill) {}

    void set(int x, int y, uint8_t r, uint8_t g, uint8_t b);
};

void write_ppm(const Image& img, const std::string& path);

// Field rendered with a blue-to-yellow colormap over [min, max]; each cell
// becomes a scale x scale pixel block, row 0 at the bottom.
Image render_heatmap(const ScalarField& field, int scale = 8);

struct CurveSeries {
    std::string name;
    std::vector<double> values;  // one per cycle; NaN points are skipped
};

// Simple axis-aligned line plot of one or more series against their index.
Image render_curves(const std::vector<CurveSeries>& series, int width = 640, int height = 400);

struct OverlayPoint {
    Vec2 p;
    int color_index = 0;  // palette entry
    bool emphasized = false;
};

// Scatter + hull polylines inside the given bounds.
Image render_overlay(const std::vector<OverlayPoint>& points,
                     const std::vector<std::vector<Vec2>>& hulls, Vec2 min_corner, Vec2 max_corner,
                     int width = 480, int height = 480);

}  // namespace mgprl
