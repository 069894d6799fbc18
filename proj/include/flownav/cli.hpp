#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flownav/net.hpp"
#include "flownav/ppo.hpp"

namespace flownav::cli {

inline constexpr const char* kToolVersion = "0.1.0";

// Flat key = value configuration text. A line `include = <path>` loads the
// referenced file first (relative to the including file); later keys win.
std::map<std::string, std::string> parse_config_file(const std::string& path);

// The keys accepted by `train` config files and flags.
struct RunOptions {
    ppo::TrainConfig train;
    double sigma = 4.0;
    int region_h = 8;
    int region_w = 8;
    int n_samples = 4096;
    int eval_episodes = 20;
};

// Applies file values onto options; throws ConfigError naming unknown keys.
void apply_config(const std::map<std::string, std::string>& cfg, RunOptions& options);

// Per-episode rollout summary shared by rollout/eval-curve/acceptance.
struct EpisodeOutcome {
    bool success = false;
    bool crash = false;
    bool timeout = false;
    double reward_sum = 0.0;
    int length = 0;
    double abs_offset_sum = 0.0;  // sum over steps of |y - free_space_center(x)|
    std::vector<env::TrajectoryRow> rows;
};

struct RolloutSummary {
    int episodes = 0, successes = 0, crashes = 0, timeouts = 0;
    double mean_return = 0.0;
    double mean_length = 0.0;
    double mean_abs_offset = 0.0;  // step-weighted across all episodes
};

EpisodeOutcome run_episode(const net::Checkpoint& ckpt,
                           const std::vector<world::TunnelSpec>& library,
                           std::optional<int> tunnel_id, std::uint64_t seed, bool stochastic);

RolloutSummary summarize(const std::vector<EpisodeOutcome>& episodes);

std::uint64_t episode_seed(std::uint64_t base, int episode);

// Entry point used by the binary; returns the process exit code
// (0 ok, 2 config error, 3 I/O error, 4 numeric failure).
int run(int argc, const char* const* argv);

}  // namespace flownav::cli
