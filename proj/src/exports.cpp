#include "flownav/exports.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace flownav::exports {

void write_pgm(const std::vector<std::uint8_t>& pixels, int height, int width,
               const std::string& path) {
    if (static_cast<int>(pixels.size()) != height * width)
        throw NumericError("write_pgm: size mismatch");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write image: " + path);
    f << "P5\n" << width << " " << height << "\n255\n";
    f.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
    if (!f.good()) throw IoError("write failed: " + path);
}

std::vector<std::uint8_t> to_gray(const std::vector<double>& grid, double lo, double hi) {
    if (hi <= lo) {
        hi = lo;
        for (double v : grid) hi = std::max(hi, v);
        if (hi <= lo) hi = lo + 1.0;
    }
    std::vector<std::uint8_t> out(grid.size());
    const double scale = 255.0 / (hi - lo);
    for (size_t i = 0; i < grid.size(); ++i) {
        const double v = std::clamp((grid[i] - lo) * scale, 0.0, 255.0);
        out[i] = static_cast<std::uint8_t>(std::lround(v));
    }
    return out;
}

void write_flow_pgm(const flow::FlowImage& obs, const std::string& stem) {
    write_pgm(to_gray(obs.mag, 0.0, 0.0), obs.height, obs.width, stem + "_mag.pgm");
    write_pgm(to_gray(obs.dir_x, -1.0, 1.0), obs.height, obs.width, stem + "_dirx.pgm");
    write_pgm(to_gray(obs.dir_y, -1.0, 1.0), obs.height, obs.width, stem + "_diry.pgm");
}

void write_flow_csv(const flow::FlowImage& obs, const flow::CameraModel& camera,
                    const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write flow csv: " + path);
    f << "u,v,mag,dir_x,dir_y\n";
    char buf[200];
    for (int row = 0; row < obs.height; ++row) {
        for (int col = 0; col < obs.width; ++col) {
            const size_t i = obs.idx(row, col);
            std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n",
                          camera.u_of_col(col), camera.v_of_row(row), obs.mag[i],
                          obs.dir_x[i], obs.dir_y[i]);
            f << buf;
        }
    }
    if (!f.good()) throw IoError("write failed: " + path);
}

void write_grid_csv(const std::vector<double>& grid, int height, int width,
                    const std::string& path) {
    if (static_cast<int>(grid.size()) != height * width)
        throw NumericError("write_grid_csv: size mismatch");
    std::ofstream f(path);
    if (!f) throw IoError("cannot write grid csv: " + path);
    char buf[64];
    for (int row = 0; row < height; ++row) {
        for (int col = 0; col < width; ++col) {
            std::snprintf(buf, sizeof buf, "%.17g", grid[static_cast<size_t>(row) * width + col]);
            f << buf << (col + 1 == width ? "\n" : ",");
        }
    }
    if (!f.good()) throw IoError("write failed: " + path);
}

std::vector<double> read_grid_csv(const std::string& path, int& height, int& width) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open grid csv: " + path);
    std::vector<double> grid;
    std::string line;
    height = 0;
    width = -1;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream iss(line);
        std::string cell;
        int cols = 0;
        while (std::getline(iss, cell, ',')) {
            grid.push_back(std::stod(cell));
            ++cols;
        }
        if (width < 0) width = cols;
        else if (cols != width) throw IoError("ragged grid csv: " + path);
        ++height;
    }
    return grid;
}

void write_attention_pgm(const explain::AttentionMap& map, const std::string& path) {
    write_pgm(to_gray(map.value, 0.0, 0.0), map.height, map.width, path);
}

void write_composite_pgm(const flow::FlowImage& obs, const explain::AttentionMap& map,
                         const std::string& path) {
    if (obs.height != map.height || obs.width != map.width)
        throw NumericError("composite: shape mismatch");
    const int gap = 2;
    const int w = 2 * obs.width + gap;
    std::vector<std::uint8_t> canvas(static_cast<size_t>(obs.height) * w, 255);
    const auto left = to_gray(obs.mag, 0.0, 0.0);
    const auto right = to_gray(map.value, 0.0, 0.0);
    for (int row = 0; row < obs.height; ++row) {
        for (int col = 0; col < obs.width; ++col) {
            canvas[static_cast<size_t>(row) * w + col] = left[obs.idx(row, col)];
            canvas[static_cast<size_t>(row) * w + obs.width + gap + col] =
                right[obs.idx(row, col)];
        }
    }
    write_pgm(canvas, obs.height, w, path);
}

void write_tunnel_map_pgm(const world::TunnelSpec& tunnel,
                          const std::vector<Vec2>& trajectory, double px_per_meter,
                          const std::string& path) {
    const double margin = 1.0;  // meters around the footprint
    const int w = static_cast<int>(std::ceil((tunnel.length + 2 * margin) * px_per_meter));
    const int h = static_cast<int>(std::ceil((tunnel.width + 2 * margin) * px_per_meter));
    std::vector<std::uint8_t> img(static_cast<size_t>(h) * w, 230);

    auto to_px = [&](double x, double y, int& px, int& py) {
        px = static_cast<int>(std::lround((x + margin) * px_per_meter));
        py = static_cast<int>(std::lround((tunnel.width / 2.0 + margin - y) * px_per_meter));
    };
    auto put = [&](int px, int py, std::uint8_t v) {
        if (px >= 0 && px < w && py >= 0 && py < h) img[static_cast<size_t>(py) * w + px] = v;
    };

    // Walls.
    for (double x = 0.0; x <= tunnel.length; x += 0.5 / px_per_meter) {
        int px, py;
        to_px(x, tunnel.width / 2.0, px, py);
        put(px, py, 0);
        to_px(x, -tunnel.width / 2.0, px, py);
        put(px, py, 0);
    }
    // Obstacles (filled).
    for (const world::Obstacle& ob : tunnel.obstacles) {
        const int r_px = static_cast<int>(std::ceil(ob.radius * px_per_meter));
        int cx, cy;
        to_px(ob.center.x, ob.center.y, cx, cy);
        for (int dy = -r_px; dy <= r_px; ++dy)
            for (int dx = -r_px; dx <= r_px; ++dx)
                if (dx * dx + dy * dy <= r_px * r_px) put(cx + dx, cy + dy, 60);
    }
    // Trajectory.
    for (const Vec2& p : trajectory) {
        int px, py;
        to_px(p.x, p.y, px, py);
        put(px, py, 0);
        put(px + 1, py, 0);
        put(px, py + 1, 0);
    }
    write_pgm(img, h, w, path);
}

}  // namespace flownav::exports
