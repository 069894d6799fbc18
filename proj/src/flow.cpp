#include "flownav/flow.hpp"

#include <algorithm>
#include <cmath>

namespace flownav::flow {

CameraModel CameraModel::make(int width_px, int height_px, double fov_x) {
    if (width_px <= 0 || height_px <= 0)
        throw ConfigError("camera resolution must be positive");
    if (fov_x <= 0.0 || fov_x >= M_PI)
        throw ConfigError("camera fov_x must be in (0, pi)");
    CameraModel cam;
    cam.width_px = width_px;
    cam.height_px = height_px;
    cam.fov_x = fov_x;
    cam.f_x = (width_px / 2.0) / std::tan(fov_x / 2.0);
    cam.f_y = cam.f_x;
    return cam;
}

std::array<double, 3> pixel_ray(const CameraModel& camera, double u, double v) {
    const double n = std::sqrt(camera.f_x * camera.f_x + u * u + v * v);
    return {camera.f_x / n, u / n, v / n};
}

FlowImage FlowImage::zeros(int height, int width) {
    FlowImage img;
    img.height = height;
    img.width = width;
    const size_t n = static_cast<size_t>(height) * width;
    img.mag.assign(n, 0.0);
    img.dir_x.assign(n, 0.0);
    img.dir_y.assign(n, 0.0);
    return img;
}

DepthRender render_depth_full(const world::TunnelSpec& tunnel, Vec2 position,
                              const CameraModel& camera) {
    DepthRender out;
    out.depth.height = camera.height_px;
    out.depth.width = camera.width_px;
    const size_t n = static_cast<size_t>(camera.pixels());
    out.depth.d.resize(n);
    out.kind.resize(n);

    // The drone never yaws, so the body frame is axis-aligned with the world:
    // forward = +x, starboard = +y. Rays in one image column share the same
    // horizontal direction, so raycast once per column.
    for (int col = 0; col < camera.width_px; ++col) {
        const double u = camera.u_of_col(col);
        const double hnorm = std::sqrt(camera.f_x * camera.f_x + u * u);
        const Vec2 hdir{camera.f_x / hnorm, u / hnorm};
        const world::RayHit hit = world::raycast(tunnel, position, hdir);
        for (int row = 0; row < camera.height_px; ++row) {
            const double v = camera.v_of_row(row);
            // cos(elevation) of the 3-D pixel ray.
            const double cos_el = hnorm / std::sqrt(hnorm * hnorm + v * v);
            const size_t i = static_cast<size_t>(row) * camera.width_px + col;
            if (hit.kind == world::HitKind::FarPlane) {
                out.depth.d[i] = world::kFarPlane;
                out.kind[i] = world::HitKind::FarPlane;
            } else {
                const double slant = hit.distance / cos_el;
                if (slant >= world::kFarPlane) {
                    out.depth.d[i] = world::kFarPlane;
                    out.kind[i] = world::HitKind::FarPlane;
                } else {
                    out.depth.d[i] = slant;
                    out.kind[i] = hit.kind;
                }
            }
        }
    }
    return out;
}

DepthMap render_depth(const world::TunnelSpec& tunnel, Vec2 position,
                      const CameraModel& camera) {
    return render_depth_full(tunnel, position, camera).depth;
}

FlowField optic_flow(const DepthMap& depth, const VelocityState& vel,
                     const CameraModel& camera) {
    FlowField f;
    f.height = depth.height;
    f.width = depth.width;
    const size_t n = static_cast<size_t>(depth.height) * depth.width;
    f.du.resize(n);
    f.dv.resize(n);
    const auto& V = vel.linear;
    const auto& W = vel.angular;
    const double fx = camera.f_x, fy = camera.f_y;
    for (int row = 0; row < depth.height; ++row) {
        const double v = camera.v_of_row(row);
        for (int col = 0; col < depth.width; ++col) {
            const double u = camera.u_of_col(col);
            const size_t i = static_cast<size_t>(row) * depth.width + col;
            const double d = depth.d[i];
            f.du[i] = (fx / d) * V[0] - (u / d) * V[2] - (u * v / fx) * W[0] -
                      ((fx * fx + u * u) / fx) * W[1] - v * W[2];
            f.dv[i] = (fy / d) * V[1] - (v / d) * V[2] - ((fy * fy + u * u) / fy) * W[0] +
                      (u * v / fy) * W[1] + u * W[2];
        }
    }
    return f;
}

FlowImage encode_observation(const FlowField& field) {
    FlowImage img = FlowImage::zeros(field.height, field.width);
    const size_t n = field.du.size();
    for (size_t i = 0; i < n; ++i) {
        const double m = std::hypot(field.du[i], field.dv[i]);
        img.mag[i] = m;
        if (m > kFlowEps) {
            img.dir_x[i] = field.du[i] / m;
            img.dir_y[i] = field.dv[i] / m;
        }
    }
    return img;
}

std::vector<double> to_input(const FlowImage& obs, double mag_clip) {
    if (mag_clip <= 0.0) throw ConfigError("mag_clip must be > 0");
    const size_t n = obs.mag.size();
    std::vector<double> x(3 * n);
    for (size_t i = 0; i < n; ++i) x[i] = std::min(obs.mag[i], mag_clip) / mag_clip;
    std::copy(obs.dir_x.begin(), obs.dir_x.end(), x.begin() + n);
    std::copy(obs.dir_y.begin(), obs.dir_y.end(), x.begin() + 2 * n);
    return x;
}

}  // namespace flownav::flow
