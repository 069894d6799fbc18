#include "flownav/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <thread>

namespace flownav::ppo {

void TrainConfig::validate() const {
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (steps_per_epoch <= 0) throw ConfigError("steps_per_epoch must be > 0");
    if (gamma <= 0.0 || gamma > 1.0) throw ConfigError("gamma must be in (0, 1]");
    if (gae_lambda < 0.0 || gae_lambda > 1.0) throw ConfigError("gae_lambda must be in [0, 1]");
    if (clip_epsilon <= 0.0) throw ConfigError("clip_epsilon must be > 0");
    if (learning_rate < 0.0) throw ConfigError("learning_rate must be >= 0");
    if (minibatch_size <= 0 || steps_per_epoch % minibatch_size != 0)
        throw ConfigError("steps_per_epoch must be divisible by minibatch_size");
    if (update_passes <= 0) throw ConfigError("update_passes must be > 0");
    if (n_agents <= 0) throw ConfigError("n_agents must be > 0");
    if (cam_width <= 0 || cam_height <= 0) throw ConfigError("camera resolution must be positive");
    if (mag_clip <= 0.0) throw ConfigError("mag_clip must be > 0");
}

RolloutBuffer::RolloutBuffer(int capacity_, int input_dim_)
    : capacity(capacity_), input_dim(input_dim_) {
    obs.reserve(static_cast<size_t>(capacity) * input_dim);
    actions.reserve(capacity);
    log_probs.reserve(capacity);
    rewards.reserve(capacity);
    values.reserve(capacity);
    terminal.reserve(capacity);
    episode_end.reserve(capacity);
    bootstrap.reserve(capacity);
}

void RolloutBuffer::clear() {
    obs.clear();
    actions.clear();
    log_probs.clear();
    rewards.clear();
    values.clear();
    terminal.clear();
    episode_end.clear();
    bootstrap.clear();
    size = 0;
}

void RolloutBuffer::push(std::span<const float> observation, const std::array<double, 2>& action,
                         double log_prob, double reward, double value) {
    if (size >= capacity) throw NumericError("rollout buffer overflow");
    if (static_cast<int>(observation.size()) != input_dim)
        throw NumericError("rollout buffer: observation size mismatch");
    obs.insert(obs.end(), observation.begin(), observation.end());
    actions.push_back(action);
    log_probs.push_back(log_prob);
    rewards.push_back(reward);
    values.push_back(value);
    terminal.push_back(0);
    episode_end.push_back(0);
    bootstrap.push_back(0.0);
    ++size;
}

void RolloutBuffer::mark_terminal() {
    terminal.back() = 1;
    episode_end.back() = 1;
}

void RolloutBuffer::mark_truncated(double bootstrap_value) {
    episode_end.back() = 1;
    bootstrap.back() = bootstrap_value;
}

GaeResult compute_gae(const RolloutBuffer& buffer, double gamma, double lambda) {
    if (buffer.size == 0) throw NumericError("compute_gae: empty buffer");
    GaeResult out;
    out.advantages.resize(buffer.size);
    out.returns.resize(buffer.size);
    double gae = 0.0;
    for (int t = buffer.size - 1; t >= 0; --t) {
        double next_value;
        double next_nonterminal;
        if (buffer.episode_end[t]) {
            next_nonterminal = buffer.terminal[t] ? 0.0 : 1.0;
            next_value = buffer.bootstrap[t];
            gae = 0.0;
        } else {
            next_nonterminal = 1.0;
            next_value = buffer.values[t + 1];
        }
        const double delta =
            buffer.rewards[t] + gamma * next_value * next_nonterminal - buffer.values[t];
        gae = delta + gamma * lambda * next_nonterminal * gae;
        out.advantages[t] = gae;
        out.returns[t] = gae + buffer.values[t];
    }
    return out;
}

void normalize_advantages(std::vector<double>& advantages) {
    if (advantages.empty()) return;
    const double n = static_cast<double>(advantages.size());
    const double mean = std::accumulate(advantages.begin(), advantages.end(), 0.0) / n;
    double var = 0.0;
    for (double a : advantages) var += (a - mean) * (a - mean);
    const double stdev = std::sqrt(var / n);
    const double scale = stdev > 1e-12 ? 1.0 / stdev : 1.0;
    for (double& a : advantages) a = (a - mean) * scale;
}

SurrogateTerms surrogate_terms(double logp_new, double logp_old, double advantage,
                               double clip_epsilon) {
    const double ratio = std::exp(logp_new - logp_old);
    const double unclipped = ratio * advantage;
    const double clipped =
        std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * advantage;
    SurrogateTerms t;
    t.clipped = std::abs(ratio - 1.0) > clip_epsilon;
    if (unclipped <= clipped) {
        t.objective = unclipped;
        t.d_logp = ratio * advantage;  // d(ratio*A)/d logp_new = ratio*A
    } else {
        t.objective = clipped;
        t.d_logp = 0.0;
    }
    return t;
}

Adam::Adam(std::vector<size_t> sizes, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (size_t n : sizes) {
        m_.emplace_back(n, 0.0);
        v_.emplace_back(n, 0.0);
    }
}

void Adam::step(const std::vector<std::vector<double>*>& params,
                const std::vector<const std::vector<double>*>& grads, double lr) {
    if (params.size() != m_.size() || grads.size() != m_.size())
        throw NumericError("adam: tensor list mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t k = 0; k < params.size(); ++k) {
        std::vector<double>& p = *params[k];
        const std::vector<double>& g = *grads[k];
        std::vector<double>& m = m_[k];
        std::vector<double>& v = v_[k];
        if (p.size() != m.size() || g.size() != m.size())
            throw NumericError("adam: tensor size mismatch");
        for (size_t i = 0; i < p.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

namespace {

std::vector<double> to_double(std::span<const float> x) {
    return std::vector<double>(x.begin(), x.end());
}

struct PolicyGrads {
    net::NetGrads net;
    std::vector<double> log_std;
};

}  // namespace

double ppo_loss(const net::PolicyParams& policy, const net::ValueParams& value,
                const RolloutBuffer& buffer, const std::vector<int>& rows,
                const std::vector<double>& advantages, const std::vector<double>& returns,
                const TrainConfig& config) {
    const double m = static_cast<double>(rows.size());
    double pi_sum = 0.0, v_sum = 0.0, ent_sum = 0.0;
    for (int i : rows) {
        const std::vector<double> x = to_double(buffer.obs_at(i));
        const net::GaussianActionDist dist = net::policy_forward(policy, x);
        const double logp = net::log_prob(dist, buffer.actions[i]);
        const SurrogateTerms st =
            surrogate_terms(logp, buffer.log_probs[i], advantages[i], config.clip_epsilon);
        pi_sum += st.objective;
        const double v = net::value_forward(value, x);
        v_sum += (v - returns[i]) * (v - returns[i]);
        ent_sum += net::entropy(dist);
    }
    return -pi_sum / m + config.value_coef * v_sum / m - config.entropy_coef * ent_sum / m;
}

LossGrads ppo_loss_grads(const net::PolicyParams& policy, const net::ValueParams& value,
                         const RolloutBuffer& buffer, const std::vector<int>& rows,
                         const std::vector<double>& advantages,
                         const std::vector<double>& returns, const TrainConfig& config) {
    LossGrads out;
    out.policy = net::NetGrads::zeros(policy.net.shape);
    out.log_std.assign(policy.log_std.size(), 0.0);
    out.value = net::NetGrads::zeros(value.net.shape);
    const double inv_m = 1.0 / static_cast<double>(rows.size());

    net::ForwardCache pcache, vcache;
    for (int i : rows) {
        const std::vector<double> x = to_double(buffer.obs_at(i));

        const net::GaussianActionDist dist = net::policy_forward(policy, x, &pcache);
        const double logp = net::log_prob(dist, buffer.actions[i]);
        const SurrogateTerms st =
            surrogate_terms(logp, buffer.log_probs[i], advantages[i], config.clip_epsilon);
        out.pi_loss -= st.objective * inv_m;
        out.kl += (buffer.log_probs[i] - logp) * inv_m;
        out.entropy += net::entropy(dist) * inv_m;
        if (st.clipped) ++out.clipped;

        // d loss / d logp_new = -(1/m) * st.d_logp
        const double g_logp = -inv_m * st.d_logp;
        std::array<double, 2> d_mean;
        for (int d = 0; d < 2; ++d) {
            const double diff = buffer.actions[i][d] - dist.mean[d];
            const double inv_var = 1.0 / (dist.std[d] * dist.std[d]);
            d_mean[d] = g_logp * diff * inv_var;
            // d logp / d log_std = z^2 - 1; d entropy / d log_std = 1.
            out.log_std[d] += g_logp * (diff * diff * inv_var - 1.0) -
                              config.entropy_coef * inv_m;
        }
        net::net_backward(policy.net, pcache, d_mean, out.policy);

        const double v = net::value_forward(value, x, &vcache);
        const double verr = v - returns[i];
        out.v_loss += config.value_coef * verr * verr * inv_m;
        const std::array<double, 1> d_v{2.0 * config.value_coef * verr * inv_m};
        net::net_backward(value.net, vcache, d_v, out.value);
    }
    return out;
}

UpdateStats ppo_update(net::PolicyParams& policy, net::ValueParams& value,
                       Adam& policy_opt, Adam& value_opt, const RolloutBuffer& buffer,
                       const std::vector<double>& advantages,
                       const std::vector<double>& returns, const TrainConfig& config,
                       double lr, Rng& rng) {
    const int n = buffer.size;
    if (n == 0) throw NumericError("ppo_update: empty buffer");
    const int mb = std::min(config.minibatch_size, n);

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    UpdateStats stats;
    long stat_batches = 0;

    std::vector<int> rows(mb);
    for (int pass = 0; pass < config.update_passes; ++pass) {
        // Fisher-Yates with the run's deterministic stream.
        for (int i = n - 1; i > 0; --i)
            std::swap(order[i], order[rng.uniform_int(static_cast<std::uint64_t>(i) + 1)]);

        for (int start = 0; start + mb <= n; start += mb) {
            std::copy(order.begin() + start, order.begin() + start + mb, rows.begin());
            LossGrads g = ppo_loss_grads(policy, value, buffer, rows, advantages, returns, config);

            const double total = g.pi_loss + g.v_loss - config.entropy_coef * g.entropy;
            if (!std::isfinite(total))
                throw NumericError("ppo_update: non-finite loss (pi=" + std::to_string(g.pi_loss) +
                                   " v=" + std::to_string(g.v_loss) +
                                   " ent=" + std::to_string(g.entropy) + ")");

            policy_opt.step({&policy.net.conv_w, &policy.net.conv_b, &policy.net.fc1_w,
                             &policy.net.fc1_b, &policy.net.fc2_w, &policy.net.fc2_b,
                             &policy.log_std},
                            {&g.policy.conv_w, &g.policy.conv_b, &g.policy.fc1_w,
                             &g.policy.fc1_b, &g.policy.fc2_w, &g.policy.fc2_b, &g.log_std},
                            lr);
            for (double& ls : policy.log_std)
                ls = std::clamp(ls, net::kLogStdMin, net::kLogStdMax);
            value_opt.step({&value.net.conv_w, &value.net.conv_b, &value.net.fc1_w,
                            &value.net.fc1_b, &value.net.fc2_w, &value.net.fc2_b},
                           {&g.value.conv_w, &g.value.conv_b, &g.value.fc1_w, &g.value.fc1_b,
                            &g.value.fc2_w, &g.value.fc2_b},
                           lr);

            stats.pi_loss += g.pi_loss;
            stats.v_loss += g.v_loss;
            stats.entropy += g.entropy;
            stats.kl += g.kl;
            stats.clip_frac += static_cast<double>(g.clipped) / mb;
            ++stat_batches;
        }
    }

    if (stat_batches > 0) {
        stats.pi_loss /= stat_batches;
        stats.v_loss /= stat_batches;
        stats.entropy /= stat_batches;
        stats.kl /= stat_batches;
        stats.clip_frac /= stat_batches;
    }
    return stats;
}

std::string metrics_header() {
    return "epoch,steps,mean_return,success_rate,crash_rate,mean_len,pi_loss,v_loss,"
           "entropy,kl,clip_frac\n";
}

std::string metrics_row(const EpochStats& s) {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "%d,%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  s.epoch, s.steps, s.mean_return, s.success_rate, s.crash_rate, s.mean_len,
                  s.update.pi_loss, s.update.v_loss, s.update.entropy, s.update.kl,
                  s.update.clip_frac);
    return buf;
}

std::uint64_t agent_seed(std::uint64_t base_seed, int agent_idx) {
    // splitmix64 of (seed, agent) keeps agent streams well separated.
    std::uint64_t z = base_seed + 0x9e3779b97f4a7c15ull * (static_cast<std::uint64_t>(agent_idx) + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

AgentResult train_agent(const TrainConfig& config, int agent_idx,
                        const std::vector<world::TunnelSpec>& library,
                        const std::string& out_dir) {
    config.validate();
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    Rng rng(agent_seed(config.seed, agent_idx));

    env::EnvConfig env_cfg;
    if (config.tunnel_id >= 0) env_cfg.tunnel_id = config.tunnel_id;
    env_cfg.camera = flow::CameraModel::make(config.cam_width, config.cam_height);
    env::Env environment(library, env_cfg);

    const net::NetShape pshape = net::NetShape::for_image(config.cam_height, config.cam_width, 2);
    net::PolicyParams policy = net::make_policy(pshape, rng);
    net::ValueParams value = net::make_value(pshape, rng);

    auto checkpoint_of = [&](const net::PolicyParams& p, const net::ValueParams& v) {
        net::Checkpoint c;
        c.policy = p;
        c.value = v;
        c.mag_clip = config.mag_clip;
        c.fov_x = env_cfg.camera.fov_x;
        return c;
    };
    auto ckpt_path = [&](int epoch) {
        return out_dir + "/agent" + std::to_string(agent_idx) + "_epoch" +
               std::to_string(epoch) + ".ckpt";
    };

    AgentResult result;
    result.metrics_path = out_dir + "/metrics_agent" + std::to_string(agent_idx) + ".csv";
    std::ofstream metrics(result.metrics_path);
    if (!metrics) throw IoError("cannot write metrics file: " + result.metrics_path);
    metrics << metrics_header();
    metrics.flush();

    net::save_checkpoint(checkpoint_of(policy, value), ckpt_path(0));
    result.checkpoint_paths.push_back(ckpt_path(0));

    const int input_dim = 3 * env_cfg.camera.pixels();
    RolloutBuffer buffer(config.steps_per_epoch, input_dim);

    Adam policy_opt({policy.net.conv_w.size(), policy.net.conv_b.size(), policy.net.fc1_w.size(),
                     policy.net.fc1_b.size(), policy.net.fc2_w.size(), policy.net.fc2_b.size(),
                     policy.log_std.size()});
    Adam value_opt({value.net.conv_w.size(), value.net.conv_b.size(), value.net.fc1_w.size(),
                    value.net.fc1_b.size(), value.net.fc2_w.size(), value.net.fc2_b.size()});

    // Persistent episode state (episodes continue across epoch boundaries).
    auto [obs0, st0] = environment.reset(rng.next_u64());
    std::vector<double> current = flow::to_input(obs0, config.mag_clip);
    double episode_reward_sum = 0.0;
    int episode_len = 0;

    long total_steps = 0;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        buffer.clear();
        int ep_done = 0, ep_success = 0, ep_crash = 0;
        double ep_return_sum = 0.0;
        long ep_len_sum = 0;

        std::vector<float> obs_f(input_dim);
        for (int step = 0; step < config.steps_per_epoch; ++step) {
            for (int i = 0; i < input_dim; ++i) obs_f[i] = static_cast<float>(current[i]);

            const net::GaussianActionDist dist = net::policy_forward(policy, current);
            const auto [action, logp] = net::sample_action(dist, rng);
            const double v = net::value_forward(value, current);

            const env::StepResult sr = environment.step({action[0], action[1]});
            buffer.push(obs_f, action, logp, sr.reward, v);
            episode_reward_sum += sr.reward;
            ++episode_len;
            ++total_steps;

            const std::vector<double> next = flow::to_input(sr.observation, config.mag_clip);
            if (sr.terminated || sr.truncated) {
                if (sr.terminated) {
                    buffer.mark_terminal();
                } else {
                    buffer.mark_truncated(net::value_forward(value, next));
                }
                ++ep_done;
                if (sr.info.succeeded) ++ep_success;
                if (sr.info.crashed) ++ep_crash;
                ep_return_sum += episode_reward_sum;
                ep_len_sum += episode_len;
                episode_reward_sum = 0.0;
                episode_len = 0;
                auto [obs, st] = environment.reset(rng.next_u64());
                current = flow::to_input(obs, config.mag_clip);
            } else {
                current = next;
                if (step == config.steps_per_epoch - 1)
                    buffer.mark_truncated(net::value_forward(value, current));
            }
        }

        GaeResult gae = compute_gae(buffer, config.gamma, config.gae_lambda);
        normalize_advantages(gae.advantages);
        const double lr =
            config.lr_decay
                ? config.learning_rate * (1.0 - static_cast<double>(epoch - 1) / config.epochs)
                : config.learning_rate;
        const UpdateStats us = ppo_update(policy, value, policy_opt, value_opt, buffer,
                                          gae.advantages, gae.returns, config, lr, rng);

        EpochStats es;
        es.epoch = epoch;
        es.steps = total_steps;
        es.episodes = ep_done;
        if (ep_done > 0) {
            es.mean_return = ep_return_sum / ep_done;
            es.success_rate = static_cast<double>(ep_success) / ep_done;
            es.crash_rate = static_cast<double>(ep_crash) / ep_done;
            es.mean_len = static_cast<double>(ep_len_sum) / ep_done;
        }
        es.update = us;
        metrics << metrics_row(es);
        metrics.flush();
        result.metrics.push_back(es);

        net::save_checkpoint(checkpoint_of(policy, value), ckpt_path(epoch));
        result.checkpoint_paths.push_back(ckpt_path(epoch));
    }
    if (!metrics.good()) throw IoError("metrics write failed: " + result.metrics_path);
    return result;
}

std::vector<AgentResult> train(const TrainConfig& config,
                               const std::vector<world::TunnelSpec>& library,
                               const std::string& out_dir, bool parallel_agents) {
    config.validate();
    std::vector<AgentResult> results(config.n_agents);
    if (parallel_agents && config.n_agents > 1) {
        std::vector<std::thread> workers;
        std::vector<std::exception_ptr> errors(config.n_agents);
        for (int k = 0; k < config.n_agents; ++k) {
            workers.emplace_back([&, k] {
                try {
                    results[k] = train_agent(config, k, library, out_dir);
                } catch (...) {
                    errors[k] = std::current_exception();
                }
            });
        }
        for (auto& w : workers) w.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    } else {
        for (int k = 0; k < config.n_agents; ++k)
            results[k] = train_agent(config, k, library, out_dir);
    }
    return results;
}

}  // namespace flownav::ppo
