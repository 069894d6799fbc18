#pragma once

#include <string>
#include <vector>

#include "flownav/explain.hpp"
#include "flownav/flow.hpp"

namespace flownav::exports {

// Binary (P5) 8-bit portable graymap. Values are clamped to [0, 255].
void write_pgm(const std::vector<std::uint8_t>& pixels, int height, int width,
               const std::string& path);

// Grid scaled so that [lo, hi] maps to [0, 255]; hi <= lo uses the grid max.
std::vector<std::uint8_t> to_gray(const std::vector<double>& grid, double lo, double hi);

// Three-plane graymap export of a FlowImage (mag, dir_x, dir_y), one file
// per channel: <stem>_mag.pgm, <stem>_dirx.pgm, <stem>_diry.pgm.
void write_flow_pgm(const flow::FlowImage& obs, const std::string& stem);

// CSV with one row per pixel: u, v, mag, dir_x, dir_y (centered coords).
void write_flow_csv(const flow::FlowImage& obs, const flow::CameraModel& camera,
                    const std::string& path);

// CSV grid (height rows x width comma-separated values).
void write_grid_csv(const std::vector<double>& grid, int height, int width,
                    const std::string& path);
std::vector<double> read_grid_csv(const std::string& path, int& height, int& width);

// Attention map as grayscale PGM, scaled to its own maximum.
void write_attention_pgm(const explain::AttentionMap& map, const std::string& path);

// Side-by-side composite: observation magnitude | attention, 2-px divider.
void write_composite_pgm(const flow::FlowImage& obs, const explain::AttentionMap& map,
                         const std::string& path);

// Top-down tunnel map (px_per_meter scale) with an optional trajectory
// overlay of (x, y) points.
void write_tunnel_map_pgm(const world::TunnelSpec& tunnel,
                          const std::vector<Vec2>& trajectory, double px_per_meter,
                          const std::string& path);

}  // namespace flownav::exports
