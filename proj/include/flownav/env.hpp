#pragma once

#include <optional>
#include <string>
#include <vector>

#include "flownav/flow.hpp"
#include "flownav/world.hpp"

namespace flownav::env {

inline constexpr double kDt = 0.05;          // physics step, seconds
inline constexpr double kAccelMax = 3.0;     // per-axis acceleration bound, m/s^2
inline constexpr double kVelMax = 2.0;       // per-axis target-velocity bound, m/s
inline constexpr double kTimeLimit = 30.0;   // seconds
inline constexpr int kCollisionSubsteps = 4; // collision checks per step
inline constexpr int kMaxSteps = 600;        // kTimeLimit / kDt

// Planar drone state at fixed height. max_x_so_far is the running maximum
// global x, the quantity the progress reward telescopes over.
struct KinematicState {
    Vec2 position;
    Vec2 target_velocity;
    double height = 1.0;
    double elapsed = 0.0;
    double max_x_so_far = 0.0;
};

// Body-frame forward/starboard accelerations; clamped to the a_max box.
struct Action {
    double ax = 0.0;
    double ay = 0.0;
};

struct StepInfo {
    bool crashed = false;
    bool succeeded = false;
    Vec2 position;
};

struct StepResult {
    flow::FlowImage observation;
    double reward = 0.0;
    bool terminated = false;  // crash or success
    bool truncated = false;   // timeout
    StepInfo info;
};

// Each component clipped to [-bound, bound]. Idempotent.
Vec2 clamp_box(Vec2 v, double bound);

// Discounted return sum_i gamma^i r_i.
double episode_return(const std::vector<double>& rewards, double gamma = 0.99);

struct EnvConfig {
    std::optional<int> tunnel_id;  // unset: drawn uniformly per reset
    flow::CameraModel camera = flow::CameraModel::make(64, 48);
    double body_radius = world::kBodyRadius;
};

// One tunnel-navigation episode source. Observations are rendered after the
// state update, from the post-update velocity. Single-threaded; independent
// instances may run concurrently.
class Env {
public:
    Env(std::vector<world::TunnelSpec> library, EnvConfig config);

    // Starts a new episode; deterministic for a given seed.
    // Throws ConfigError for an unknown tunnel id.
    std::pair<flow::FlowImage, KinematicState> reset(std::uint64_t seed);

    // Advances one step. Throws std::logic_error after a terminal step.
    StepResult step(const Action& action);

    const KinematicState& state() const { return state_; }
    const world::TunnelSpec& tunnel() const { return *tunnel_; }
    const flow::CameraModel& camera() const { return config_.camera; }
    const EnvConfig& config() const { return config_; }
    bool done() const { return done_; }
    int steps() const { return step_count_; }

private:
    flow::FlowImage observe() const;

    std::vector<world::TunnelSpec> library_;
    EnvConfig config_;
    const world::TunnelSpec* tunnel_ = nullptr;
    KinematicState state_;
    int step_count_ = 0;
    bool done_ = true;
};

// One row per step of a trajectory log.
struct TrajectoryRow {
    int step = 0;
    double t = 0.0;
    double x = 0.0, y = 0.0;
    double vx = 0.0, vy = 0.0;
    double ax = 0.0, ay = 0.0;
    double reward = 0.0;
    std::string event;  // "", "crash", "success", "timeout"
};

void write_trajectory_csv(const std::vector<TrajectoryRow>& rows, const std::string& path);

// 99th percentile of flow magnitudes seen under random accelerations across
// the given tunnels; fixes the observation scale for network input.
double calibrate_mag_clip(const std::vector<world::TunnelSpec>& tunnels,
                          const flow::CameraModel& camera, int steps_per_tunnel,
                          std::uint64_t seed);

}  // namespace flownav::env
