#pragma once

#include <array>
#include <string>
#include <vector>

#include "flownav/env.hpp"
#include "flownav/net.hpp"

namespace flownav::ppo {

struct TrainConfig {
    int epochs = 100;
    int steps_per_epoch = 1024;
    double gamma = 0.99;
    double gae_lambda = 0.95;
    double clip_epsilon = 0.2;
    double learning_rate = 3e-4;
    int minibatch_size = 256;
    int update_passes = 10;
    double entropy_coef = 0.01;
    double value_coef = 0.5;
    std::uint64_t seed = 1;
    int n_agents = 4;
    int tunnel_id = -1;  // -1: drawn uniformly per episode
    int cam_width = 64;
    int cam_height = 48;
    double mag_clip = flow::kDefaultMagClip;
    bool lr_decay = true;

    void validate() const;  // throws ConfigError
};

// Fixed-capacity per-epoch store of rollout steps. Episode boundaries are
// explicit; advantages never bootstrap across a terminal step.
struct RolloutBuffer {
    int capacity = 0;
    int input_dim = 0;
    std::vector<float> obs;                        // capacity * input_dim
    std::vector<std::array<double, 2>> actions;
    std::vector<double> log_probs;
    std::vector<double> rewards;
    std::vector<double> values;
    std::vector<std::uint8_t> terminal;            // episode ended here with no bootstrap
    std::vector<std::uint8_t> episode_end;         // terminal, truncated, or cut at capacity
    std::vector<double> bootstrap;                 // V(s_T) where episode_end && !terminal
    int size = 0;

    RolloutBuffer(int capacity, int input_dim);
    void clear();
    void push(std::span<const float> observation, const std::array<double, 2>& action,
              double log_prob, double reward, double value);
    void mark_terminal();
    void mark_truncated(double bootstrap_value);
    std::span<const float> obs_at(int i) const {
        return {obs.data() + static_cast<size_t>(i) * input_dim,
                static_cast<size_t>(input_dim)};
    }
};

struct GaeResult {
    std::vector<double> advantages;
    std::vector<double> returns;
};

// delta_t = r_t + gamma * V(s_{t+1}) * (1 - terminal) - V(s_t);
// A_t = sum_k (gamma*lambda)^k delta_{t+k} within the episode; returns = A + V.
// Throws NumericError on an empty buffer.
GaeResult compute_gae(const RolloutBuffer& buffer, double gamma, double lambda);

// In-place shift/scale to mean 0, std 1.
void normalize_advantages(std::vector<double>& advantages);

// Clipped-surrogate pieces for one sample; split out so the gradient math is
// testable against pencil-and-paper cases.
struct SurrogateTerms {
    double objective;   // min(ratio*adv, clip(ratio)*adv)
    double d_logp;      // d objective / d logp_new
    bool clipped;       // |ratio - 1| > epsilon
};
SurrogateTerms surrogate_terms(double logp_new, double logp_old, double advantage,
                               double clip_epsilon);

// Bias-corrected adaptive moment optimizer over a flat list of tensors.
class Adam {
public:
    Adam(std::vector<size_t> sizes, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);
    void step(const std::vector<std::vector<double>*>& params,
              const std::vector<const std::vector<double>*>& grads, double lr);

private:
    std::vector<std::vector<double>> m_, v_;
    double beta1_, beta2_, eps_;
    long t_ = 0;
};

struct UpdateStats {
    double pi_loss = 0.0;
    double v_loss = 0.0;
    double entropy = 0.0;
    double kl = 0.0;        // mean(logp_old - logp_new)
    double clip_frac = 0.0;
};

// One PPO update over the buffer: update_passes sweeps of shuffled
// minibatches, Adam steps on both networks. Advantages must already be
// normalized. Throws NumericError on a non-finite loss.
UpdateStats ppo_update(net::PolicyParams& policy, net::ValueParams& value,
                       Adam& policy_opt, Adam& value_opt, const RolloutBuffer& buffer,
                       const std::vector<double>& advantages,
                       const std::vector<double>& returns, const TrainConfig& config,
                       double lr, Rng& rng);

// Total PPO loss over a set of buffer rows under the given parameters; used
// by gradient-fidelity tests (pure function of the parameters).
double ppo_loss(const net::PolicyParams& policy, const net::ValueParams& value,
                const RolloutBuffer& buffer, const std::vector<int>& rows,
                const std::vector<double>& advantages, const std::vector<double>& returns,
                const TrainConfig& config);

// Loss value plus exact analytic gradients for one minibatch of rows.
struct LossGrads {
    net::NetGrads policy;
    std::vector<double> log_std;
    net::NetGrads value;
    double pi_loss = 0.0;
    double v_loss = 0.0;
    double entropy = 0.0;
    double kl = 0.0;
    long clipped = 0;
};
LossGrads ppo_loss_grads(const net::PolicyParams& policy, const net::ValueParams& value,
                         const RolloutBuffer& buffer, const std::vector<int>& rows,
                         const std::vector<double>& advantages,
                         const std::vector<double>& returns, const TrainConfig& config);

struct EpochStats {
    int epoch = 0;
    long steps = 0;
    double mean_return = 0.0;
    double success_rate = 0.0;
    double crash_rate = 0.0;
    double mean_len = 0.0;
    UpdateStats update;
    int episodes = 0;
};

std::string metrics_header();
std::string metrics_row(const EpochStats& s);

struct AgentResult {
    std::vector<std::string> checkpoint_paths;
    std::vector<EpochStats> metrics;
    std::string metrics_path;
};

// Trains one agent; writes metrics_agent{k}.csv and agent{k}_epoch{e}.ckpt
// under out_dir (epoch 0 is the initial parameters).
AgentResult train_agent(const TrainConfig& config, int agent_idx,
                        const std::vector<world::TunnelSpec>& library,
                        const std::string& out_dir);

// Runs n_agents independent trainings (distinct derived seeds). When
// `parallel_agents` is set, agents run in separate threads; each agent is
// single-threaded internally and its outputs are identical either way.
std::vector<AgentResult> train(const TrainConfig& config,
                               const std::vector<world::TunnelSpec>& library,
                               const std::string& out_dir, bool parallel_agents = false);

std::uint64_t agent_seed(std::uint64_t base_seed, int agent_idx);

}  // namespace flownav::ppo
