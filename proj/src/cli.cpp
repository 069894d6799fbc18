#include "flownav/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "flownav/explain.hpp"
#include "flownav/exports.hpp"

namespace flownav::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

void parse_config_into(const std::string& path, std::map<std::string, std::string>& out,
                       int depth) {
    if (depth > 8) throw ConfigError("config include chain too deep at " + path);
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key == "include") {
            const fs::path base = fs::path(path).parent_path();
            parse_config_into((base / val).string(), out, depth + 1);
        } else {
            out[key] = val;
        }
    }
}

long to_long(const std::string& key, const std::string& val) {
    try {
        size_t pos = 0;
        const long v = std::stol(val, &pos);
        if (pos != val.size()) throw std::invalid_argument(val);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected integer, got '" + val + "'");
    }
}

double to_double(const std::string& key, const std::string& val) {
    try {
        size_t pos = 0;
        const double v = std::stod(val, &pos);
        if (pos != val.size()) throw std::invalid_argument(val);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected number, got '" + val + "'");
    }
}

std::pair<int, int> parse_regions(const std::string& val) {
    const auto x = val.find('x');
    if (x == std::string::npos) {
        const long r = to_long("regions", val);
        return {static_cast<int>(r), static_cast<int>(r)};
    }
    return {static_cast<int>(to_long("regions", val.substr(0, x))),
            static_cast<int>(to_long("regions", val.substr(x + 1)))};
}

std::vector<world::TunnelSpec> load_library(const std::string& tunnel_dir) {
    return tunnel_dir.empty() ? world::tunnel_library() : world::load_tunnel_dir(tunnel_dir);
}

void ensure_run_dir(const std::string& dir, bool force) {
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!force) throw IoError("output directory not empty (use --force): " + dir);
    }
    fs::create_directories(dir);
}

std::string config_snapshot(const RunOptions& o) {
    std::ostringstream s;
    char buf[128];
    auto put_l = [&](const char* k, long v) { s << k << " = " << v << "\n"; };
    auto put_d = [&](const char* k, double v) {
        std::snprintf(buf, sizeof buf, "%s = %.17g\n", k, v);
        s << buf;
    };
    put_l("epochs", o.train.epochs);
    put_l("steps_per_epoch", o.train.steps_per_epoch);
    put_d("gamma", o.train.gamma);
    put_d("gae_lambda", o.train.gae_lambda);
    put_d("clip_epsilon", o.train.clip_epsilon);
    put_d("learning_rate", o.train.learning_rate);
    put_l("minibatch_size", o.train.minibatch_size);
    put_l("update_passes", o.train.update_passes);
    put_d("entropy_coef", o.train.entropy_coef);
    put_d("value_coef", o.train.value_coef);
    put_l("seed", static_cast<long>(o.train.seed));
    put_l("n_agents", o.train.n_agents);
    put_l("tunnel", o.train.tunnel_id);
    put_l("cam_width", o.train.cam_width);
    put_l("cam_height", o.train.cam_height);
    put_d("mag_clip", o.train.mag_clip);
    put_d("sigma", o.sigma);
    s << "regions = " << o.region_h << "x" << o.region_w << "\n";
    put_l("n_samples", o.n_samples);
    put_l("eval_episodes", o.eval_episodes);
    return s.str();
}

json config_json(const RunOptions& o) {
    json j;
    j["epochs"] = o.train.epochs;
    j["steps_per_epoch"] = o.train.steps_per_epoch;
    j["gamma"] = o.train.gamma;
    j["gae_lambda"] = o.train.gae_lambda;
    j["clip_epsilon"] = o.train.clip_epsilon;
    j["learning_rate"] = o.train.learning_rate;
    j["minibatch_size"] = o.train.minibatch_size;
    j["update_passes"] = o.train.update_passes;
    j["entropy_coef"] = o.train.entropy_coef;
    j["value_coef"] = o.train.value_coef;
    j["seed"] = o.train.seed;
    j["n_agents"] = o.train.n_agents;
    j["tunnel"] = o.train.tunnel_id;
    j["cam_width"] = o.train.cam_width;
    j["cam_height"] = o.train.cam_height;
    j["mag_clip"] = o.train.mag_clip;
    j["sigma"] = o.sigma;
    j["regions"] = std::to_string(o.region_h) + "x" + std::to_string(o.region_w);
    j["n_samples"] = o.n_samples;
    j["eval_episodes"] = o.eval_episodes;
    return j;
}

}  // namespace

std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::map<std::string, std::string> out;
    parse_config_into(path, out, 0);
    return out;
}

void apply_config(const std::map<std::string, std::string>& cfg, RunOptions& o) {
    for (const auto& [key, val] : cfg) {
        if (key == "epochs") o.train.epochs = static_cast<int>(to_long(key, val));
        else if (key == "steps_per_epoch") o.train.steps_per_epoch = static_cast<int>(to_long(key, val));
        else if (key == "gamma") o.train.gamma = to_double(key, val);
        else if (key == "gae_lambda") o.train.gae_lambda = to_double(key, val);
        else if (key == "clip_epsilon") o.train.clip_epsilon = to_double(key, val);
        else if (key == "learning_rate") o.train.learning_rate = to_double(key, val);
        else if (key == "minibatch_size") o.train.minibatch_size = static_cast<int>(to_long(key, val));
        else if (key == "update_passes") o.train.update_passes = static_cast<int>(to_long(key, val));
        else if (key == "entropy_coef") o.train.entropy_coef = to_double(key, val);
        else if (key == "value_coef") o.train.value_coef = to_double(key, val);
        else if (key == "seed") o.train.seed = static_cast<std::uint64_t>(to_long(key, val));
        else if (key == "n_agents") o.train.n_agents = static_cast<int>(to_long(key, val));
        else if (key == "tunnel") o.train.tunnel_id = static_cast<int>(to_long(key, val));
        else if (key == "cam_width") o.train.cam_width = static_cast<int>(to_long(key, val));
        else if (key == "cam_height") o.train.cam_height = static_cast<int>(to_long(key, val));
        else if (key == "mag_clip") o.train.mag_clip = to_double(key, val);
        else if (key == "sigma") o.sigma = to_double(key, val);
        else if (key == "regions") std::tie(o.region_h, o.region_w) = parse_regions(val);
        else if (key == "n_samples") o.n_samples = static_cast<int>(to_long(key, val));
        else if (key == "eval_episodes") o.eval_episodes = static_cast<int>(to_long(key, val));
        else throw ConfigError("unknown config key '" + key + "'");
    }
}

std::uint64_t episode_seed(std::uint64_t base, int episode) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (static_cast<std::uint64_t>(episode) + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

EpisodeOutcome run_episode(const net::Checkpoint& ckpt,
                           const std::vector<world::TunnelSpec>& library,
                           std::optional<int> tunnel_id, std::uint64_t seed, bool stochastic) {
    const net::NetShape& shape = ckpt.policy.net.shape;
    env::EnvConfig cfg;
    cfg.tunnel_id = tunnel_id;
    cfg.camera = flow::CameraModel::make(shape.in_w, shape.in_h, ckpt.fov_x);
    env::Env environment(library, cfg);

    Rng rng(seed);
    auto [obs, st] = environment.reset(rng.next_u64());
    flow::FlowImage current = std::move(obs);

    EpisodeOutcome out;
    const world::TunnelSpec& tunnel = environment.tunnel();
    while (true) {
        const std::vector<double> x = flow::to_input(current, ckpt.mag_clip);
        const net::GaussianActionDist dist = net::policy_forward(ckpt.policy, x);
        std::array<double, 2> action = dist.mean;
        if (stochastic) action = net::sample_action(dist, rng).first;
        const env::StepResult sr = environment.step({action[0], action[1]});

        const env::KinematicState& ks = environment.state();
        env::TrajectoryRow row;
        row.step = environment.steps();
        row.t = ks.elapsed;
        row.x = ks.position.x;
        row.y = ks.position.y;
        row.vx = ks.target_velocity.x;
        row.vy = ks.target_velocity.y;
        const Vec2 a = env::clamp_box({action[0], action[1]}, env::kAccelMax);
        row.ax = a.x;
        row.ay = a.y;
        row.reward = sr.reward;
        if (sr.info.crashed) row.event = "crash";
        else if (sr.info.succeeded) row.event = "success";
        else if (sr.truncated) row.event = "timeout";
        out.rows.push_back(row);

        out.reward_sum += sr.reward;
        ++out.length;
        out.abs_offset_sum +=
            std::abs(ks.position.y - world::free_space_center(tunnel, ks.position.x));

        if (sr.terminated || sr.truncated) {
            out.success = sr.info.succeeded;
            out.crash = sr.info.crashed;
            out.timeout = sr.truncated;
            break;
        }
        current = sr.observation;
    }
    return out;
}

RolloutSummary summarize(const std::vector<EpisodeOutcome>& episodes) {
    RolloutSummary s;
    s.episodes = static_cast<int>(episodes.size());
    long steps = 0;
    double offset = 0.0;
    for (const EpisodeOutcome& e : episodes) {
        s.successes += e.success ? 1 : 0;
        s.crashes += e.crash ? 1 : 0;
        s.timeouts += e.timeout ? 1 : 0;
        s.mean_return += e.reward_sum;
        s.mean_length += e.length;
        steps += e.length;
        offset += e.abs_offset_sum;
    }
    if (s.episodes > 0) {
        s.mean_return /= s.episodes;
        s.mean_length /= s.episodes;
    }
    if (steps > 0) s.mean_abs_offset = offset / static_cast<double>(steps);
    return s;
}

namespace {

void write_summary_csv(const RolloutSummary& s, int episodes_requested,
                       const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write summary: " + path);
    f << "episodes,successes,crashes,timeouts,success_rate,mean_return,mean_length,"
         "mean_abs_offset\n";
    if (episodes_requested > 0) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%d,%d,%d,%d,%.17g,%.17g,%.17g,%.17g\n", s.episodes,
                      s.successes, s.crashes, s.timeouts,
                      s.episodes ? static_cast<double>(s.successes) / s.episodes : 0.0,
                      s.mean_return, s.mean_length, s.mean_abs_offset);
        f << buf;
    }
    if (!f.good()) throw IoError("write failed: " + path);
}

int cmd_train(const RunOptions& options, const std::string& out_dir, bool force,
              const std::string& tunnel_dir, bool parallel_agents, bool calibrate) {
    RunOptions o = options;
    o.train.validate();
    const auto library = load_library(tunnel_dir);
    ensure_run_dir(out_dir, force);

    if (calibrate) {
        o.train.mag_clip = env::calibrate_mag_clip(
            library, flow::CameraModel::make(o.train.cam_width, o.train.cam_height), 256,
            o.train.seed);
        std::printf("calibrated mag_clip = %.6g\n", o.train.mag_clip);
    }

    // Manifest goes out before any training starts.
    json manifest;
    manifest["tool"] = "flownav";
    manifest["version"] = kToolVersion;
    manifest["command"] = "train";
    manifest["created_unix"] =
        std::chrono::duration_cast<std::chrono::seconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count();
    manifest["config"] = config_json(o);
    std::vector<std::uint64_t> seeds;
    for (int k = 0; k < o.train.n_agents; ++k) seeds.push_back(ppo::agent_seed(o.train.seed, k));
    manifest["agent_seeds"] = seeds;
    char hash_buf[32];
    std::snprintf(hash_buf, sizeof hash_buf, "%016llx",
                  static_cast<unsigned long long>(world::library_hash(library)));
    manifest["tunnel_library_hash"] = hash_buf;
    manifest["checkpoint_pattern"] = "agent{k}_epoch{e}.ckpt";
    manifest["metrics_pattern"] = "metrics_agent{k}.csv";
    manifest["total_steps_scheduled"] =
        static_cast<long long>(o.train.n_agents) * o.train.epochs * o.train.steps_per_epoch;
    {
        std::ofstream mf(out_dir + "/manifest.json");
        if (!mf) throw IoError("cannot write manifest");
        mf << manifest.dump(2) << "\n";
    }
    {
        std::ofstream cf(out_dir + "/config.cfg");
        if (!cf) throw IoError("cannot write config snapshot");
        cf << config_snapshot(o);
    }

    const auto results = ppo::train(o.train, library, out_dir, parallel_agents);
    for (int k = 0; k < static_cast<int>(results.size()); ++k) {
        const auto& m = results[k].metrics;
        if (!m.empty())
            std::printf("agent %d: final mean_return %.3f success_rate %.3f\n", k,
                        m.back().mean_return, m.back().success_rate);
    }
    std::printf("run directory: %s\n", out_dir.c_str());
    return 0;
}

int cmd_rollout(const std::string& ckpt_path, int tunnel_id, int episodes,
                std::uint64_t seed, bool stochastic, const std::string& out_dir, bool force,
                const std::string& tunnel_dir) {
    const net::Checkpoint ckpt = net::load_checkpoint(ckpt_path);
    const auto library = load_library(tunnel_dir);
    ensure_run_dir(out_dir, force);

    std::vector<EpisodeOutcome> outcomes;
    for (int e = 0; e < episodes; ++e) {
        std::optional<int> tid;
        if (tunnel_id >= 0) tid = tunnel_id;
        EpisodeOutcome out =
            run_episode(ckpt, library, tid, episode_seed(seed, e), stochastic);
        char name[64];
        std::snprintf(name, sizeof name, "/episode_%03d.csv", e);
        env::write_trajectory_csv(out.rows, out_dir + name);
        outcomes.push_back(std::move(out));
    }
    const RolloutSummary s = summarize(outcomes);
    write_summary_csv(s, episodes, out_dir + "/summary.csv");
    std::printf("episodes %d success %d crash %d timeout %d mean_return %.3f\n", s.episodes,
                s.successes, s.crashes, s.timeouts, s.mean_return);
    return 0;
}

int cmd_explain(const std::vector<std::string>& ckpt_paths, int tunnel_id, std::uint64_t seed,
                const explain::ExplainOptions& opts, int designated,
                const std::string& out_dir, bool force, const std::string& tunnel_dir) {
    if (ckpt_paths.empty() || ckpt_paths.size() > 4)
        throw ConfigError("explain expects 1-4 checkpoints");
    std::vector<net::Checkpoint> ckpts;
    for (const std::string& p : ckpt_paths) ckpts.push_back(net::load_checkpoint(p));
    const auto library = load_library(tunnel_dir);
    ensure_run_dir(out_dir, force);

    std::optional<int> tid;
    if (tunnel_id >= 0) tid = tunnel_id;
    const explain::ExplainTrace trace =
        explain::collect_explanations(ckpts, designated, library, tid, seed, opts);

    for (size_t t = 0; t < trace.maps.size(); ++t) {
        char name[64];
        std::snprintf(name, sizeof name, "/attn_t%04zu", t);
        const std::string stem = out_dir + name;
        exports::write_grid_csv(trace.maps[t].value, trace.maps[t].height, trace.maps[t].width,
                                stem + ".csv");
        exports::write_attention_pgm(trace.maps[t], stem + ".pgm");
        std::snprintf(name, sizeof name, "/composite_t%04zu.pgm", t);
        exports::write_composite_pgm(trace.observations[t], trace.maps[t], out_dir + name);
    }

    json meta;
    meta["tool"] = "flownav";
    meta["version"] = kToolVersion;
    meta["agents"] = ckpt_paths.size();
    meta["checkpoints"] = ckpt_paths;
    meta["designated"] = designated;
    meta["timesteps"] = trace.maps.size();
    meta["sigma"] = opts.sigma;
    meta["regions"] = std::to_string(opts.region_h) + "x" + std::to_string(opts.region_w);
    meta["n_samples"] = opts.n_samples;
    meta["seed"] = seed;
    meta["tunnel"] = tunnel_id;
    std::ofstream mf(out_dir + "/metadata.json");
    if (!mf) throw IoError("cannot write metadata");
    mf << meta.dump(2) << "\n";

    std::printf("wrote %zu attention maps to %s\n", trace.maps.size(), out_dir.c_str());
    return 0;
}

int cmd_eval_curve(const std::string& run_dir, int agent, int tunnel_id, int episodes,
                   std::uint64_t seed, bool stochastic, const std::string& out_path,
                   const std::string& tunnel_dir) {
    const auto library = load_library(tunnel_dir);
    // Discover agent{k}_epoch{e}.ckpt files for the agent.
    std::vector<int> epochs;
    const std::string prefix = "agent" + std::to_string(agent) + "_epoch";
    for (const auto& entry : fs::directory_iterator(run_dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind(prefix, 0) == 0 && entry.path().extension() == ".ckpt") {
            const std::string num = name.substr(prefix.size(), name.size() - prefix.size() - 5);
            epochs.push_back(std::stoi(num));
        }
    }
    if (epochs.empty()) throw IoError("no checkpoints for agent " + std::to_string(agent) +
                                      " in " + run_dir);
    std::sort(epochs.begin(), epochs.end());
    std::vector<int> missing;
    for (int e = 0; e <= epochs.back(); ++e)
        if (!std::binary_search(epochs.begin(), epochs.end(), e)) missing.push_back(e);
    if (!missing.empty()) {
        std::string list;
        for (int e : missing) list += (list.empty() ? "" : ", ") + std::to_string(e);
        throw IoError("missing checkpoints for epochs: " + list);
    }

    std::ofstream f(out_path);
    if (!f) throw IoError("cannot write eval curve: " + out_path);
    f << "epoch,success_rate\n";
    std::optional<int> tid;
    if (tunnel_id >= 0) tid = tunnel_id;
    for (int e : epochs) {
        const net::Checkpoint ckpt = net::load_checkpoint(
            run_dir + "/" + prefix + std::to_string(e) + ".ckpt");
        int successes = 0;
        for (int ep = 0; ep < episodes; ++ep) {
            if (run_episode(ckpt, library, tid, episode_seed(seed, ep), stochastic).success)
                ++successes;
        }
        char buf[64];
        std::snprintf(buf, sizeof buf, "%d,%.17g\n", e,
                      episodes > 0 ? static_cast<double>(successes) / episodes : 0.0);
        f << buf;
        f.flush();
    }
    if (!f.good()) throw IoError("write failed: " + out_path);
    std::printf("wrote %s\n", out_path.c_str());
    return 0;
}

int cmd_render_tunnel(int tunnel_id, const std::string& trajectory_csv, double scale,
                      const std::string& out_path, const std::string& tunnel_dir) {
    const auto library = load_library(tunnel_dir);
    const auto it = std::find_if(library.begin(), library.end(),
                                 [&](const auto& t) { return t.id == tunnel_id; });
    if (it == library.end())
        throw ConfigError("unknown tunnel id " + std::to_string(tunnel_id));

    std::vector<Vec2> points;
    if (!trajectory_csv.empty()) {
        std::ifstream f(trajectory_csv);
        if (!f) throw IoError("cannot open trajectory: " + trajectory_csv);
        std::string line;
        std::getline(f, line);  // header
        while (std::getline(f, line)) {
            std::istringstream iss(line);
            std::string cell;
            std::vector<std::string> cells;
            while (std::getline(iss, cell, ',')) cells.push_back(cell);
            if (cells.size() >= 4) points.push_back({std::stod(cells[2]), std::stod(cells[3])});
        }
    }
    exports::write_tunnel_map_pgm(*it, points, scale, out_path);
    std::printf("wrote %s\n", out_path.c_str());
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"Optic-flow tunnel navigation: PPO training and Shapley attention maps"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string("flownav ") + kToolVersion);

    RunOptions defaults;

    // --- train ---
    auto* train = app.add_subcommand("train", "Train agents with PPO");
    std::string tr_config, tr_out = "runs/train", tr_tunnel_dir;
    bool tr_force = false, tr_parallel = false, tr_calibrate = false;
    RunOptions tr_opts;
    long tr_seed = -1, tr_tunnel = -2;
    double tr_mag_clip = -1.0;
    train->add_option("--config", tr_config, "config file (key = value)");
    train->add_option("--out", tr_out, "run directory");
    train->add_flag("--force", tr_force, "allow writing into a non-empty directory");
    train->add_option("--tunnel-dir", tr_tunnel_dir, "directory of .tunnel files");
    train->add_flag("--parallel-agents", tr_parallel, "train agents in parallel threads");
    train->add_flag("--calibrate", tr_calibrate, "recalibrate the magnitude clip first");
    train->add_option("--epochs", tr_opts.train.epochs);
    train->add_option("--steps-per-epoch", tr_opts.train.steps_per_epoch);
    train->add_option("--gamma", tr_opts.train.gamma);
    train->add_option("--gae-lambda", tr_opts.train.gae_lambda);
    train->add_option("--clip-epsilon", tr_opts.train.clip_epsilon);
    train->add_option("--learning-rate", tr_opts.train.learning_rate);
    train->add_option("--minibatch-size", tr_opts.train.minibatch_size);
    train->add_option("--update-passes", tr_opts.train.update_passes);
    train->add_option("--entropy-coef", tr_opts.train.entropy_coef);
    train->add_option("--value-coef", tr_opts.train.value_coef);
    train->add_option("--seed", tr_seed);
    train->add_option("--n-agents", tr_opts.train.n_agents);
    train->add_option("--tunnel", tr_tunnel, "fixed tunnel id (-1: random per episode)");
    train->add_option("--cam-width", tr_opts.train.cam_width);
    train->add_option("--cam-height", tr_opts.train.cam_height);
    train->add_option("--mag-clip", tr_mag_clip);

    // --- rollout ---
    auto* rollout = app.add_subcommand("rollout", "Evaluate a checkpoint");
    std::string ro_ckpt, ro_out = "runs/rollout", ro_tunnel_dir;
    int ro_tunnel = -1, ro_episodes = 20;
    long ro_seed = 1;
    bool ro_stochastic = false, ro_force = false;
    rollout->add_option("--checkpoint", ro_ckpt)->required();
    rollout->add_option("--tunnel", ro_tunnel, "tunnel id (-1: random per episode)");
    rollout->add_option("--episodes", ro_episodes);
    rollout->add_option("--seed", ro_seed);
    rollout->add_flag("--stochastic", ro_stochastic, "sample actions instead of the mean");
    rollout->add_option("--out", ro_out);
    rollout->add_flag("--force", ro_force);
    rollout->add_option("--tunnel-dir", ro_tunnel_dir);

    // --- explain ---
    auto* explain_cmd = app.add_subcommand("explain", "Shapley attention maps");
    std::vector<std::string> ex_ckpts;
    std::string ex_out = "runs/explain", ex_tunnel_dir, ex_regions = "8x8";
    int ex_tunnel = -1, ex_steps = 16, ex_nsamples = 4096, ex_designated = 0;
    long ex_seed = 1;
    double ex_sigma = 4.0;
    bool ex_stochastic = false, ex_force = false;
    explain_cmd->add_option("--checkpoint", ex_ckpts, "1-4 checkpoints")->required();
    explain_cmd->add_option("--tunnel", ex_tunnel);
    explain_cmd->add_option("--seed", ex_seed);
    explain_cmd->add_option("--steps", ex_steps, "trajectory timesteps to explain");
    explain_cmd->add_option("--sigma", ex_sigma, "smoothing sigma in pixels");
    explain_cmd->add_option("--regions", ex_regions, "region size, e.g. 8x8");
    explain_cmd->add_option("--n-samples", ex_nsamples);
    explain_cmd->add_option("--designated", ex_designated, "trajectory-source agent index");
    explain_cmd->add_flag("--stochastic", ex_stochastic);
    explain_cmd->add_option("--out", ex_out);
    explain_cmd->add_flag("--force", ex_force);
    explain_cmd->add_option("--tunnel-dir", ex_tunnel_dir);

    // --- eval-curve ---
    auto* evalc = app.add_subcommand("eval-curve", "Success rate per training epoch");
    std::string ec_run, ec_out, ec_tunnel_dir;
    int ec_agent = 0, ec_tunnel = 0, ec_episodes = 20;
    long ec_seed = 1;
    bool ec_stochastic = false;
    evalc->add_option("--run", ec_run, "training run directory")->required();
    evalc->add_option("--agent", ec_agent);
    evalc->add_option("--tunnel", ec_tunnel);
    evalc->add_option("--episodes", ec_episodes);
    evalc->add_option("--seed", ec_seed);
    evalc->add_flag("--stochastic", ec_stochastic);
    evalc->add_option("--out", ec_out, "output csv (default <run>/eval_curve.csv)");
    evalc->add_option("--tunnel-dir", ec_tunnel_dir);

    // --- render-tunnel ---
    auto* render = app.add_subcommand("render-tunnel", "Top-down tunnel map image");
    std::string rt_traj, rt_out = "tunnel.pgm", rt_tunnel_dir;
    int rt_tunnel = 0;
    double rt_scale = 20.0;
    render->add_option("--tunnel", rt_tunnel)->required();
    render->add_option("--trajectory", rt_traj, "trajectory csv to overlay");
    render->add_option("--scale", rt_scale, "pixels per meter");
    render->add_option("--out", rt_out);
    render->add_option("--tunnel-dir", rt_tunnel_dir);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (train->parsed()) {
            RunOptions opts = defaults;
            std::map<std::string, std::string> file_cfg;
            if (!tr_config.empty()) file_cfg = parse_config_file(tr_config);
            apply_config(file_cfg, opts);
            // Explicit flags override file values.
            auto flag_given = [&](const char* name) { return train->count(name) > 0; };
            if (flag_given("--epochs")) opts.train.epochs = tr_opts.train.epochs;
            if (flag_given("--steps-per-epoch")) opts.train.steps_per_epoch = tr_opts.train.steps_per_epoch;
            if (flag_given("--gamma")) opts.train.gamma = tr_opts.train.gamma;
            if (flag_given("--gae-lambda")) opts.train.gae_lambda = tr_opts.train.gae_lambda;
            if (flag_given("--clip-epsilon")) opts.train.clip_epsilon = tr_opts.train.clip_epsilon;
            if (flag_given("--learning-rate")) opts.train.learning_rate = tr_opts.train.learning_rate;
            if (flag_given("--minibatch-size")) opts.train.minibatch_size = tr_opts.train.minibatch_size;
            if (flag_given("--update-passes")) opts.train.update_passes = tr_opts.train.update_passes;
            if (flag_given("--entropy-coef")) opts.train.entropy_coef = tr_opts.train.entropy_coef;
            if (flag_given("--value-coef")) opts.train.value_coef = tr_opts.train.value_coef;
            if (tr_seed >= 0) opts.train.seed = static_cast<std::uint64_t>(tr_seed);
            if (flag_given("--n-agents")) opts.train.n_agents = tr_opts.train.n_agents;
            if (tr_tunnel >= -1) opts.train.tunnel_id = static_cast<int>(tr_tunnel);
            if (flag_given("--cam-width")) opts.train.cam_width = tr_opts.train.cam_width;
            if (flag_given("--cam-height")) opts.train.cam_height = tr_opts.train.cam_height;
            if (tr_mag_clip > 0.0) opts.train.mag_clip = tr_mag_clip;
            return cmd_train(opts, tr_out, tr_force, tr_tunnel_dir, tr_parallel, tr_calibrate);
        }
        if (rollout->parsed()) {
            return cmd_rollout(ro_ckpt, ro_tunnel, ro_episodes,
                               static_cast<std::uint64_t>(ro_seed), ro_stochastic, ro_out,
                               ro_force, ro_tunnel_dir);
        }
        if (explain_cmd->parsed()) {
            explain::ExplainOptions opts;
            opts.max_steps = ex_steps;
            opts.sigma = ex_sigma;
            std::tie(opts.region_h, opts.region_w) = parse_regions(ex_regions);
            opts.n_samples = ex_nsamples;
            opts.stochastic_policy = ex_stochastic;
            return cmd_explain(ex_ckpts, ex_tunnel, static_cast<std::uint64_t>(ex_seed), opts,
                               ex_designated, ex_out, ex_force, ex_tunnel_dir);
        }
        if (evalc->parsed()) {
            if (ec_out.empty()) ec_out = ec_run + "/eval_curve.csv";
            return cmd_eval_curve(ec_run, ec_agent, ec_tunnel, ec_episodes,
                                  static_cast<std::uint64_t>(ec_seed), ec_stochastic, ec_out,
                                  ec_tunnel_dir);
        }
        if (render->parsed()) {
            return cmd_render_tunnel(rt_tunnel, rt_traj, rt_scale, rt_out, rt_tunnel_dir);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const IoError& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

}  // namespace flownav::cli
