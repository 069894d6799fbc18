#include "flownav/env.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace flownav::env {

Vec2 clamp_box(Vec2 v, double bound) {
    return {std::clamp(v.x, -bound, bound), std::clamp(v.y, -bound, bound)};
}

double episode_return(const std::vector<double>& rewards, double gamma) {
    double sum = 0.0;
    double g = 1.0;
    for (double r : rewards) {
        sum += g * r;
        g *= gamma;
    }
    return sum;
}

Env::Env(std::vector<world::TunnelSpec> library, EnvConfig config)
    : library_(std::move(library)), config_(config) {
    if (library_.empty()) throw ConfigError("env: empty tunnel library");
    for (const auto& t : library_) t.validate();
}

std::pair<flow::FlowImage, KinematicState> Env::reset(std::uint64_t seed) {
    Rng rng(seed);
    size_t idx;
    if (config_.tunnel_id) {
        const auto it = std::find_if(library_.begin(), library_.end(),
                                     [&](const auto& t) { return t.id == *config_.tunnel_id; });
        if (it == library_.end())
            throw ConfigError("unknown tunnel id " + std::to_string(*config_.tunnel_id));
        idx = static_cast<size_t>(it - library_.begin());
    } else {
        idx = static_cast<size_t>(rng.uniform_int(library_.size()));
    }
    tunnel_ = &library_[idx];
    state_ = KinematicState{};
    state_.position = world::sample_start(*tunnel_, rng.next_u64(), config_.body_radius);
    state_.max_x_so_far = state_.position.x;
    step_count_ = 0;
    done_ = false;
    return {observe(), state_};
}

flow::FlowImage Env::observe() const {
    const flow::DepthMap depth = flow::render_depth(*tunnel_, state_.position, config_.camera);
    flow::VelocityState vel;
    vel.linear = {state_.target_velocity.x, state_.target_velocity.y, 0.0};
    return flow::encode_observation(flow::optic_flow(depth, vel, config_.camera));
}

StepResult Env::step(const Action& action) {
    if (done_ || tunnel_ == nullptr) throw std::logic_error("episode finished");

    const Vec2 a = clamp_box({action.ax, action.ay}, kAccelMax);
    state_.target_velocity =
        clamp_box(state_.target_velocity + a * kDt, kVelMax);

    // Euler integration with sub-stepped collision checks so a full step
    // (up to 10 cm) cannot pass through geometry.
    bool crashed = false;
    bool succeeded = false;
    const Vec2 delta = state_.target_velocity * (kDt / kCollisionSubsteps);
    for (int s = 0; s < kCollisionSubsteps; ++s) {
        const Vec2 candidate = state_.position + delta;
        if (world::check_collision(*tunnel_, candidate, config_.body_radius)) {
            crashed = true;  // position stays at the last free point
            break;
        }
        state_.position = candidate;
        if (state_.position.x >= tunnel_->length) {
            succeeded = true;
            break;
        }
    }

    ++step_count_;
    state_.elapsed = step_count_ * kDt;

    double reward;
    if (crashed) {
        reward = -1.0;
    } else {
        const double m_next = std::max(state_.max_x_so_far, state_.position.x);
        reward = m_next - state_.max_x_so_far;
        state_.max_x_so_far = m_next;
    }

    StepResult result;
    result.reward = reward;
    result.terminated = crashed || succeeded;
    result.truncated = !result.terminated && step_count_ >= kMaxSteps;
    result.info = {crashed, succeeded, state_.position};
    done_ = result.terminated || result.truncated;
    result.observation = crashed ? flow::FlowImage::zeros(config_.camera.height_px,
                                                          config_.camera.width_px)
                                 : observe();
    return result;
}

void write_trajectory_csv(const std::vector<TrajectoryRow>& rows, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write trajectory file: " + path);
    f << "step,t,x,y,vx,vy,ax,ay,reward,event\n";
    char buf[320];
    for (const TrajectoryRow& r : rows) {
        std::snprintf(buf, sizeof buf,
                      "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%s\n",
                      r.step, r.t, r.x, r.y, r.vx, r.vy, r.ax, r.ay, r.reward,
                      r.event.c_str());
        f << buf;
    }
    if (!f.good()) throw IoError("write failed: " + path);
}

double calibrate_mag_clip(const std::vector<world::TunnelSpec>& tunnels,
                          const flow::CameraModel& camera, int steps_per_tunnel,
                          std::uint64_t seed) {
    std::vector<double> mags;
    Rng rng(seed);
    for (const auto& tunnel : tunnels) {
        EnvConfig cfg;
        cfg.tunnel_id = tunnel.id;
        cfg.camera = camera;
        Env e(tunnels, cfg);
        auto [obs, st] = e.reset(rng.next_u64());
        mags.insert(mags.end(), obs.mag.begin(), obs.mag.end());
        for (int i = 0; i < steps_per_tunnel; ++i) {
            if (e.done()) e.reset(rng.next_u64());
            Action a{rng.uniform(-kAccelMax, kAccelMax), rng.uniform(-kAccelMax, kAccelMax)};
            StepResult r = e.step(a);
            mags.insert(mags.end(), r.observation.mag.begin(), r.observation.mag.end());
        }
    }
    if (mags.empty()) throw NumericError("calibrate_mag_clip: no samples");
    const size_t k = static_cast<size_t>(0.99 * (mags.size() - 1));
    std::nth_element(mags.begin(), mags.begin() + k, mags.end());
    return mags[k];
}

}  // namespace flownav::env
