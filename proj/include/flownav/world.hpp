#pragma once

#include <optional>
#include <string>
#include <vector>

#include "flownav/common.hpp"

namespace flownav::world {

// Rays and flow treat everything past this range as background.
inline constexpr double kFarPlane = 50.0;
// Drone collision radius; the paper does not give one.
inline constexpr double kBodyRadius = 0.3;
// Fraction of the tunnel length used as the start zone.
inline constexpr double kStartZoneFraction = 0.05;

struct Obstacle {
    Vec2 center;   // meters, tunnel frame (+x = travel direction)
    double radius = 0.0;
};

// One tunnel: two infinite walls at y = +-width/2 plus vertical cylinders.
// The end at x = length is a pass-through (success surface, not geometry).
struct TunnelSpec {
    int id = 0;
    std::string name;
    double length = 0.0;
    double width = 0.0;
    std::vector<Obstacle> obstacles;

    // Throws ConfigError when an invariant is violated.
    void validate() const;
};

enum class HitKind { Wall, Obstacle, FarPlane };

struct RayHit {
    double distance = kFarPlane;
    HitKind kind = HitKind::FarPlane;
};

// Nearest intersection of the ray with walls/obstacles, capped at kFarPlane.
// `direction` must be unit length within 1e-9. Throws NumericError when the
// origin is not in free space.
RayHit raycast(const TunnelSpec& tunnel, Vec2 origin, Vec2 direction);

// True iff a disc of `body_radius` centered at `position` touches any wall
// or obstacle. Equivalent to signed_distance(position) < body_radius.
bool check_collision(const TunnelSpec& tunnel, Vec2 position, double body_radius);

// Distance from `position` to the nearest boundary of free space (negative
// inside an obstacle / beyond a wall).
double signed_distance(const TunnelSpec& tunnel, Vec2 position);

// The six built-in tunnels. Index in the returned vector equals the id.
std::vector<TunnelSpec> tunnel_library();

// Collision-free start position with x in the first 5% of the tunnel and
// x >= 0.2 m (keeps per-step progress rewards exactly representable).
// Deterministic for a given seed.
Vec2 sample_start(const TunnelSpec& tunnel, std::uint64_t seed,
                  double body_radius = kBodyRadius);

// Midpoint of the widest free y-interval at longitudinal position x.
double free_space_center(const TunnelSpec& tunnel, double x);

// Key-value tunnel file I/O.
TunnelSpec load_tunnel(const std::string& path);
void save_tunnel(const TunnelSpec& spec, const std::string& path);
std::string serialize_tunnel(const TunnelSpec& spec);
// Loads every *.tunnel file in a directory, sorted by id.
std::vector<TunnelSpec> load_tunnel_dir(const std::string& dir);

// Fingerprint of a tunnel set, recorded in run manifests.
std::uint64_t library_hash(const std::vector<TunnelSpec>& specs);

}  // namespace flownav::world
