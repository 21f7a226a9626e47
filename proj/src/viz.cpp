#include "mgprl/viz.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace mgprl {

namespace {

const uint8_t kPalette[6][3] = {{214, 69, 65},  {31, 119, 180}, {44, 160, 44},
                                {255, 127, 14}, {148, 103, 189}, {23, 190, 207}};

void colormap(double t, uint8_t& r, uint8_t& g, uint8_t& b) {
    // dark blue -> teal -> yellow
    t = std::clamp(t, 0.0, 1.0);
    r = static_cast<uint8_t>(255.0 * std::clamp(1.6 * t - 0.5, 0.0, 1.0));
    g = static_cast<uint8_t>(255.0 * std::clamp(1.2 * t, 0.0, 1.0));
    b = static_cast<uint8_t>(255.0 * std::clamp(0.9 - 0.8 * t, 0.1, 0.9));
}

void draw_line(Image& img, int x0, int y0, int x1, int y1, uint8_t r, uint8_t g, uint8_t b) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        img.set(x0, y0, r, g, b);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

void draw_disc(Image& img, int cx, int cy, int rad, uint8_t r, uint8_t g, uint8_t b) {
    for (int dy = -rad; dy <= rad; ++dy)
        for (int dx = -rad; dx <= rad; ++dx)
            if (dx * dx + dy * dy <= rad * rad) img.set(cx + dx, cy + dy, r, g, b);
}

}  // namespace

void Image::set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
    if (x < 0 || x >= width || y < 0 || y >= height) return;
    const size_t i = (static_cast<size_t>(y) * width + x) * 3;
    rgb[i] = r;
    rgb[i + 1] = g;
    rgb[i + 2] = b;
}

void write_ppm(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_ppm: cannot write '" + path + "'");
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.rgb.data()),
              static_cast<std::streamsize>(img.rgb.size()));
}

Image render_heatmap(const ScalarField& field, int scale) {
    const GridSpec& g = field.grid;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double v : field.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi > lo ? hi - lo : 1.0;
    Image img(g.width * scale, g.height * scale);
    for (int j = 0; j < g.height; ++j) {
        for (int i = 0; i < g.width; ++i) {
            uint8_t r, gg, b;
            colormap((field.at(i, j) - lo) / span, r, gg, b);
            // flip vertically: grid row 0 is the bottom of the image
            const int py = (g.height - 1 - j) * scale;
            for (int dy = 0; dy < scale; ++dy)
                for (int dx = 0; dx < scale; ++dx) img.set(i * scale + dx, py + dy, r, gg, b);
        }
    }
    return img;
}

Image render_curves(const std::vector<CurveSeries>& series, int width, int height) {
    Image img(width, height);
    const int margin = 32;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    size_t count = 0;
    for (const auto& s : series) {
        count = std::max(count, s.values.size());
        for (double v : s.values) {
            if (!std::isfinite(v)) continue;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (!std::isfinite(lo)) {
        lo = 0.0;
        hi = 1.0;
    }
    if (hi <= lo) hi = lo + 1.0;

    // axes
    draw_line(img, margin, height - margin, width - 8, height - margin, 0, 0, 0);
    draw_line(img, margin, height - margin, margin, 8, 0, 0, 0);

    const auto px = [&](size_t k) {
        return margin + static_cast<int>((width - margin - 16) *
                                         (count > 1 ? static_cast<double>(k) / (count - 1) : 0.0));
    };
    const auto py = [&](double v) {
        return height - margin -
               static_cast<int>((height - margin - 16) * (v - lo) / (hi - lo));
    };

    for (size_t si = 0; si < series.size(); ++si) {
        const auto* c = kPalette[si % 6];
        bool have_prev = false;
        int px0 = 0, py0 = 0;
        for (size_t k = 0; k < series[si].values.size(); ++k) {
            const double v = series[si].values[k];
            if (!std::isfinite(v)) {
                have_prev = false;
                continue;
            }
            const int x = px(k), y = py(v);
            if (have_prev) draw_line(img, px0, py0, x, y, c[0], c[1], c[2]);
            draw_disc(img, x, y, 1, c[0], c[1], c[2]);
            px0 = x;
            py0 = y;
            have_prev = true;
        }
    }
    return img;
}

Image render_overlay(const std::vector<OverlayPoint>& points,
                     const std::vector<std::vector<Vec2>>& hulls, Vec2 min_corner, Vec2 max_corner,
                     int width, int height) {
    Image img(width, height);
    const double sx = (width - 16) / std::max(max_corner.x - min_corner.x, 1e-9);
    const double sy = (height - 16) / std::max(max_corner.y - min_corner.y, 1e-9);
    const double s = std::min(sx, sy);
    const auto px = [&](const Vec2& p) {
        return std::pair<int, int>{8 + static_cast<int>((p.x - min_corner.x) * s),
                                   height - 8 - static_cast<int>((p.y - min_corner.y) * s)};
    };
    for (size_t hi = 0; hi < hulls.size(); ++hi) {
        const auto& hull = hulls[hi];
        const auto* c = kPalette[hi % 6];
        for (size_t k = 0; k + 1 <= hull.size() && hull.size() >= 2; ++k) {
            const auto [x0, y0] = px(hull[k]);
            const auto [x1, y1] = px(hull[(k + 1) % hull.size()]);
            draw_line(img, x0, y0, x1, y1, c[0], c[1], c[2]);
        }
    }
    for (const auto& pt : points) {
        const auto* c = kPalette[pt.color_index % 6];
        const auto [x, y] = px(pt.p);
        draw_disc(img, x, y, pt.emphasized ? 4 : 2, c[0], c[1], c[2]);
    }
    return img;
}

}  // namespace mgprl
