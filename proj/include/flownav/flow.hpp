#pragma once

#include <array>
#include <vector>

#include "flownav/common.hpp"
#include "flownav/world.hpp"

namespace flownav::flow {

// Direction channels are zeroed below this flow magnitude (px/s).
inline constexpr double kFlowEps = 1e-8;
// Magnitude clip for network input; 99th percentile over a calibration
// rollout (random accelerations, all six tunnels, 1024 steps per tunnel,
// 64x48 camera, seed 20240). Recompute with env::calibrate_mag_clip.
inline constexpr double kDefaultMagClip = 35.615156;

// Pinhole camera, principal point at the image center, square pixels.
// Pixel centers sit at half-integer centered coordinates:
//   u(col) = col + 0.5 - width/2,  v(row) = row + 0.5 - height/2,
// so u = +-width/2 is the edge of the field of view.
struct CameraModel {
    int width_px = 64;
    int height_px = 48;
    double fov_x = 2.0 * M_PI / 3.0;  // 120 degrees
    double f_x = 0.0;
    double f_y = 0.0;

    static CameraModel make(int width_px, int height_px, double fov_x = 2.0 * M_PI / 3.0);

    double u_of_col(int col) const { return col + 0.5 - width_px / 2.0; }
    double v_of_row(int row) const { return row + 0.5 - height_px / 2.0; }
    int pixels() const { return width_px * height_px; }
};

// Unit ray through centered pixel coordinates (u, v), in the body frame
// ordered (forward, starboard, down). The center of the image maps to the
// forward axis.
std::array<double, 3> pixel_ray(const CameraModel& camera, double u, double v);

struct DepthMap {
    int height = 0;
    int width = 0;
    std::vector<double> d;  // row-major, meters, entries in (0, kFarPlane]

    double at(int row, int col) const { return d[static_cast<size_t>(row) * width + col]; }
};

// Linear (m/s) and angular (rad/s) velocity in the body frame
// (forward, starboard, down). Agent-facing paths always use zero W.
struct VelocityState {
    std::array<double, 3> linear{0.0, 0.0, 0.0};
    std::array<double, 3> angular{0.0, 0.0, 0.0};
};

// The three-channel observation: flow magnitude plus the components of the
// normalized flow vector. Where magnitude <= kFlowEps both components are 0.
struct FlowImage {
    int height = 0;
    int width = 0;
    std::vector<double> mag;    // px/s, >= 0
    std::vector<double> dir_x;  // unit-norm with dir_y where mag > kFlowEps
    std::vector<double> dir_y;

    static FlowImage zeros(int height, int width);
    size_t idx(int row, int col) const { return static_cast<size_t>(row) * width + col; }
};

// Raw per-pixel flow vectors (u_dot, v_dot), row-major.
struct FlowField {
    int height = 0;
    int width = 0;
    std::vector<double> du;
    std::vector<double> dv;
};

// Depth along each pixel ray. Walls and obstacles are vertical, so the slant
// distance is the horizontal raycast divided by cos(elevation), capped at
// the far plane. Throws if the position is not in free space.
DepthMap render_depth(const world::TunnelSpec& tunnel, Vec2 position,
                      const CameraModel& camera);

// Same, also reporting what each ray hit (used for silhouette-edge analysis).
struct DepthRender {
    DepthMap depth;
    std::vector<world::HitKind> kind;  // row-major
};
DepthRender render_depth_full(const world::TunnelSpec& tunnel, Vec2 position,
                              const CameraModel& camera);

// Geometric optic flow: per pixel,
//   u_dot = (f_x/d)V1 - (u/d)V3 - (uv/f_x)W1 - ((f_x^2+u^2)/f_x)W2 - v W3
//   v_dot = (f_y/d)V2 - (v/d)V3 - ((f_y^2+u^2)/f_y)W1 + (uv/f_y)W2 + u W3
// with V = (forward, starboard, down). The matrix is applied exactly as
// printed in the source formulation, asymmetries included.
FlowField optic_flow(const DepthMap& depth, const VelocityState& vel,
                     const CameraModel& camera);

// Magnitude + normalized direction channels from a raw flow field.
FlowImage encode_observation(const FlowField& field);

// Network input layout: 3 channels (scaled magnitude, dir_x, dir_y), each
// height x width row-major. Magnitude is clipped at mag_clip and scaled to
// [0, 1]; direction channels pass through.
std::vector<double> to_input(const FlowImage& obs, double mag_clip);
inline int input_size(const CameraModel& cam) { return 3 * cam.pixels(); }

}  // namespace flownav::flow
