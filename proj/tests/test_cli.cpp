#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "flownav/cli.hpp"
#include "flownav/explain.hpp"
#include "flownav/exports.hpp"

using namespace flownav;
namespace fs = std::filesystem;

namespace {

int call(const std::vector<std::string>& args) {
    std::vector<const char*> argv{"flownav"};
    for (const std::string& a : args) argv.push_back(a.c_str());
    return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    return dir;
}

// Small-but-real training arguments (8x8 camera keeps the nets tiny).
std::vector<std::string> tiny_train_args(const fs::path& out, const std::string& seed) {
    return {"train",        "--out",   out.string(), "--epochs",         "2",
            "--steps-per-epoch", "48", "--minibatch-size", "16",
            "--update-passes",   "2",  "--n-agents",       "1",
            "--cam-width",       "8",  "--cam-height",     "8",
            "--tunnel",          "4",  "--seed",           seed};
}

net::Checkpoint toy_checkpoint(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    const net::NetShape shape = net::NetShape::for_image(h, w, 2);
    net::Checkpoint c;
    c.policy = net::make_policy(shape, rng);
    c.value = net::make_value(shape, rng);
    c.mag_clip = 10.0;
    c.fov_x = 2.0 * M_PI / 3.0;
    return c;
}

}  // namespace

TEST_CASE("config files parse, include, and reject unknown keys") {
    const fs::path dir = fresh_dir("flownav_cli_cfg");
    fs::create_directories(dir);
    {
        std::ofstream base(dir / "base.cfg");
        base << "# defaults\nepochs = 7\ngamma = 0.95\n";
        std::ofstream top(dir / "top.cfg");
        top << "include = base.cfg\nepochs = 9\nseed = 3\n";
    }
    const auto cfg = cli::parse_config_file((dir / "top.cfg").string());
    CHECK(cfg.at("epochs") == "9");   // later keys win over the include
    CHECK(cfg.at("gamma") == "0.95");
    CHECK(cfg.at("seed") == "3");

    cli::RunOptions opts;
    cli::apply_config(cfg, opts);
    CHECK(opts.train.epochs == 9);
    CHECK(opts.train.gamma == 0.95);
    CHECK(opts.train.seed == 3);

    CHECK_THROWS_AS(cli::apply_config({{"warp_speed", "9"}}, opts), ConfigError);
    try {
        cli::apply_config({{"warp_speed", "9"}}, opts);
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("warp_speed") != std::string::npos);
    }
    CHECK_THROWS_AS(cli::apply_config({{"epochs", "fast"}}, opts), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("default config schedules 4 agents x 100 epochs x 1024 steps") {
    const cli::RunOptions defaults;
    CHECK(defaults.train.n_agents == 4);
    CHECK(defaults.train.epochs == 100);
    CHECK(defaults.train.steps_per_epoch == 1024);
    CHECK(defaults.eval_episodes == 20);
}

TEST_CASE("train with 0 epochs writes manifest and initial checkpoints only") {
    const fs::path out = fresh_dir("flownav_cli_e0");
    auto args = tiny_train_args(out, "5");
    args[4] = "0";  // epochs
    REQUIRE(call(args) == 0);
    CHECK(fs::exists(out / "manifest.json"));
    CHECK(fs::exists(out / "config.cfg"));
    CHECK(fs::exists(out / "agent0_epoch0.ckpt"));
    CHECK_FALSE(fs::exists(out / "agent0_epoch1.ckpt"));
    const std::string manifest = slurp(out / "manifest.json");
    CHECK(manifest.find("tunnel_library_hash") != std::string::npos);
    CHECK(manifest.find("agent_seeds") != std::string::npos);
    const std::string metrics = slurp(out / "metrics_agent0.csv");
    CHECK(metrics.find("epoch,steps,") == 0);
    CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 1);  // header only
    fs::remove_all(out);
}

TEST_CASE("train twice with one seed gives identical metrics files") {
    const fs::path o1 = fresh_dir("flownav_cli_det1");
    const fs::path o2 = fresh_dir("flownav_cli_det2");
    REQUIRE(call(tiny_train_args(o1, "7")) == 0);
    REQUIRE(call(tiny_train_args(o2, "7")) == 0);
    CHECK(slurp(o1 / "metrics_agent0.csv") == slurp(o2 / "metrics_agent0.csv"));
    CHECK(slurp(o1 / "agent0_epoch2.ckpt") == slurp(o2 / "agent0_epoch2.ckpt"));
    fs::remove_all(o1);
    fs::remove_all(o2);
}

TEST_CASE("reruns into a non-empty directory require --force") {
    const fs::path out = fresh_dir("flownav_cli_force");
    REQUIRE(call(tiny_train_args(out, "5")) == 0);
    CHECK(call(tiny_train_args(out, "5")) == 3);  // i/o error without --force
    auto args = tiny_train_args(out, "5");
    args.push_back("--force");
    CHECK(call(args) == 0);
    fs::remove_all(out);
}

TEST_CASE("config file keys are overridden by explicit flags") {
    const fs::path dir = fresh_dir("flownav_cli_prec");
    fs::create_directories(dir);
    {
        std::ofstream f(dir / "run.cfg");
        f << "epochs = 0\nsteps_per_epoch = 48\nminibatch_size = 16\nupdate_passes = 2\n"
          << "n_agents = 1\ncam_width = 8\ncam_height = 8\ntunnel = 4\nseed = 11\n";
    }
    const fs::path out = dir / "run";
    REQUIRE(call({"train", "--config", (dir / "run.cfg").string(), "--out", out.string(),
                  "--n-agents", "2"}) == 0);
    CHECK(fs::exists(out / "agent0_epoch0.ckpt"));
    CHECK(fs::exists(out / "agent1_epoch0.ckpt"));  // flag overrode n_agents = 1
    const std::string snapshot = slurp(out / "config.cfg");
    CHECK(snapshot.find("n_agents = 2") != std::string::npos);
    CHECK(snapshot.find("seed = 11") != std::string::npos);

    // Unknown key in the file -> exit code 2.
    {
        std::ofstream f(dir / "bad.cfg");
        f << "epoch_count = 3\n";
    }
    CHECK(call({"train", "--config", (dir / "bad.cfg").string(), "--out",
                (dir / "bad_run").string()}) == 2);
    fs::remove_all(dir);
}

TEST_CASE("rollout: zero episodes, determinism, and a random-policy baseline") {
    const fs::path dir = fresh_dir("flownav_cli_roll");
    fs::create_directories(dir);
    const fs::path ckpt = dir / "toy.ckpt";
    net::save_checkpoint(toy_checkpoint(12, 16, 404), ckpt.string());

    const fs::path empty_out = dir / "none";
    REQUIRE(call({"rollout", "--checkpoint", ckpt.string(), "--tunnel", "0", "--episodes", "0",
                  "--out", empty_out.string()}) == 0);
    const std::string header_only = slurp(empty_out / "summary.csv");
    CHECK(std::count(header_only.begin(), header_only.end(), '\n') == 1);
    CHECK(header_only.find("mean_abs_offset") != std::string::npos);

    // Untrained checkpoint = the random-policy baseline; 50 stochastic episodes.
    const fs::path base_out = dir / "baseline";
    REQUIRE(call({"rollout", "--checkpoint", ckpt.string(), "--tunnel", "0", "--episodes", "50",
                  "--seed", "21", "--stochastic", "--out", base_out.string()}) == 0);
    const std::string summary = slurp(base_out / "summary.csv");
    CHECK(std::count(summary.begin(), summary.end(), '\n') == 2);
    std::istringstream iss(summary);
    std::string line;
    std::getline(iss, line);
    std::getline(iss, line);
    CHECK(line.rfind("50,", 0) == 0);
    CHECK(fs::exists(base_out / "episode_000.csv"));
    CHECK(fs::exists(base_out / "episode_049.csv"));

    // Deterministic mode twice -> identical episode logs and summary.
    const fs::path d1 = dir / "det1";
    const fs::path d2 = dir / "det2";
    for (const fs::path& o : {d1, d2})
        REQUIRE(call({"rollout", "--checkpoint", ckpt.string(), "--tunnel", "0", "--episodes",
                      "3", "--seed", "9", "--out", o.string()}) == 0);
    CHECK(slurp(d1 / "summary.csv") == slurp(d2 / "summary.csv"));
    CHECK(slurp(d1 / "episode_002.csv") == slurp(d2 / "episode_002.csv"));

    // Unknown tunnel id -> config error.
    CHECK(call({"rollout", "--checkpoint", ckpt.string(), "--tunnel", "42", "--episodes", "1",
                "--out", (dir / "bad").string()}) == 2);
    // Missing checkpoint -> i/o error.
    CHECK(call({"rollout", "--checkpoint", (dir / "nope.ckpt").string(), "--tunnel", "0",
                "--episodes", "1", "--out", (dir / "bad2").string()}) == 3);
    fs::remove_all(dir);
}

TEST_CASE("explain on a 4x4 toy matches exact Shapley per pixel") {
    const fs::path dir = fresh_dir("flownav_cli_explain");
    fs::create_directories(dir);
    const net::Checkpoint ckpt = toy_checkpoint(4, 4, 505);
    const fs::path ckpt_path = dir / "toy.ckpt";
    net::save_checkpoint(ckpt, ckpt_path.string());

    const fs::path out = dir / "maps";
    REQUIRE(call({"explain", "--checkpoint", ckpt_path.string(), "--tunnel", "4", "--seed", "3",
                  "--steps", "2", "--sigma", "0", "--regions", "1x1", "--out", out.string()}) == 0);
    CHECK(fs::exists(out / "attn_t0000.csv"));
    CHECK(fs::exists(out / "attn_t0001.pgm"));
    CHECK(fs::exists(out / "composite_t0000.pgm"));
    const std::string meta = slurp(out / "metadata.json");
    CHECK(meta.find("\"agents\": 1") != std::string::npos);
    CHECK(meta.find("\"sigma\": 0.0") != std::string::npos);

    // Independent oracle: replay the designated rollout's first observation
    // and compare the exported per-pixel map with exact Shapley values.
    explain::ExplainOptions opts;
    opts.max_steps = 2;
    opts.sigma = 0.0;
    opts.region_h = 1;
    opts.region_w = 1;
    opts.n_samples = 64;
    const auto trace =
        explain::collect_explanations({ckpt}, 0, world::tunnel_library(), 4, 3, opts);

    const explain::FeaturePartition part = explain::FeaturePartition::blocks(4, 4, 1, 1);
    const flow::FlowImage baseline = flow::FlowImage::zeros(4, 4);
    for (int t = 0; t < 2; ++t) {
        const explain::ObsModel model = [&](const flow::FlowImage& img) {
            const auto dist = net::policy_forward(ckpt.policy, flow::to_input(img, ckpt.mag_clip));
            return std::vector<double>{dist.mean[0], dist.mean[1]};
        };
        const explain::ShapResult exact =
            explain::exact_shapley(model, trace.observations[t], baseline, part);
        char name[32];
        std::snprintf(name, sizeof name, "attn_t%04d.csv", t);
        int h = 0, w = 0;
        const auto grid = exports::read_grid_csv((out / name).string(), h, w);
        REQUIRE(h == 4);
        REQUIRE(w == 4);
        for (int i = 0; i < 16; ++i) {
            const double expect = std::abs(exact.phi[i][0]) + std::abs(exact.phi[i][1]);
            CHECK(std::abs(grid[i] - expect) < 1e-9);
        }
    }

    // Architecture mismatch among checkpoints -> config error.
    const fs::path other = dir / "other.ckpt";
    net::save_checkpoint(toy_checkpoint(8, 8, 506), other.string());
    CHECK(call({"explain", "--checkpoint", ckpt_path.string(), "--checkpoint", other.string(),
                "--tunnel", "4", "--out", (dir / "bad").string()}) == 2);
    fs::remove_all(dir);
}

TEST_CASE("explain with four checkpoints reports four agents") {
    const fs::path dir = fresh_dir("flownav_cli_explain4");
    fs::create_directories(dir);
    std::vector<std::string> args{"explain", "--tunnel", "4", "--steps", "1",
                                  "--regions", "2x2", "--out", (dir / "maps").string()};
    for (int k = 0; k < 4; ++k) {
        const fs::path p = dir / ("a" + std::to_string(k) + ".ckpt");
        net::save_checkpoint(toy_checkpoint(4, 4, 600 + k), p.string());
        args.push_back("--checkpoint");
        args.push_back(p.string());
    }
    REQUIRE(call(args) == 0);
    const std::string meta = slurp(dir / "maps" / "metadata.json");
    CHECK(meta.find("\"agents\": 4") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("eval-curve walks epoch checkpoints and flags gaps") {
    const fs::path out = fresh_dir("flownav_cli_curve");
    auto args = tiny_train_args(out, "13");
    args[4] = "1";  // one epoch -> checkpoints for epochs 0 and 1
    REQUIRE(call(args) == 0);

    const fs::path csv = out / "curve.csv";
    REQUIRE(call({"eval-curve", "--run", out.string(), "--tunnel", "4", "--episodes", "2",
                  "--seed", "5", "--out", csv.string()}) == 0);
    const std::string curve = slurp(csv);
    CHECK(curve.find("epoch,success_rate") == 0);
    CHECK(std::count(curve.begin(), curve.end(), '\n') == 3);  // header + epochs 0, 1

    // Determinism.
    const fs::path csv2 = out / "curve2.csv";
    REQUIRE(call({"eval-curve", "--run", out.string(), "--tunnel", "4", "--episodes", "2",
                  "--seed", "5", "--out", csv2.string()}) == 0);
    CHECK(slurp(csv) == slurp(csv2));

    // Remove an intermediate checkpoint: the gap must be reported.
    fs::remove(out / "agent0_epoch0.ckpt");
    CHECK(call({"eval-curve", "--run", out.string(), "--tunnel", "4", "--episodes", "1",
                "--out", (out / "gap.csv").string()}) == 3);
    fs::remove_all(out);
}

TEST_CASE("render-tunnel produces a valid graymap with trajectory overlay") {
    const fs::path dir = fresh_dir("flownav_cli_render");
    fs::create_directories(dir);
    const fs::path img = dir / "map.pgm";
    REQUIRE(call({"render-tunnel", "--tunnel", "0", "--scale", "10", "--out", img.string()}) == 0);
    std::ifstream f(img, std::ios::binary);
    std::string magic;
    f >> magic;
    CHECK(magic == "P5");
    int w = 0, h = 0, maxval = 0;
    f >> w >> h >> maxval;
    CHECK(w == static_cast<int>(std::ceil((24.0 + 2.0) * 10)));
    CHECK(h == static_cast<int>(std::ceil((4.0 + 2.0) * 10)));
    CHECK(maxval == 255);

    // Overlay path from a trajectory log.
    std::vector<env::TrajectoryRow> rows(2);
    rows[0] = {1, 0.05, 1.0, 0.0, 0, 0, 0, 0, 0.0, ""};
    rows[1] = {2, 0.10, 2.0, 0.5, 0, 0, 0, 0, 0.0, ""};
    env::write_trajectory_csv(rows, (dir / "traj.csv").string());
    REQUIRE(call({"render-tunnel", "--tunnel", "0", "--trajectory", (dir / "traj.csv").string(),
                  "--out", (dir / "map2.pgm").string()}) == 0);
    CHECK(fs::exists(dir / "map2.pgm"));

    CHECK(call({"render-tunnel", "--tunnel", "77", "--out", (dir / "bad.pgm").string()}) == 2);
    fs::remove_all(dir);
}

TEST_CASE("custom tunnel directories override the built-in library") {
    const fs::path dir = fresh_dir("flownav_cli_tdir");
    fs::create_directories(dir / "tunnels");
    world::TunnelSpec t;
    t.id = 0;
    t.name = "custom";
    t.length = 21.0;
    t.width = 5.0;
    world::save_tunnel(t, (dir / "tunnels" / "custom.tunnel").string());

    const fs::path img = dir / "map.pgm";
    REQUIRE(call({"render-tunnel", "--tunnel", "0", "--tunnel-dir", (dir / "tunnels").string(),
                  "--scale", "10", "--out", img.string()}) == 0);
    std::ifstream f(img, std::ios::binary);
    std::string magic;
    int w = 0;
    f >> magic >> w;
    CHECK(w == static_cast<int>(std::ceil((21.0 + 2.0) * 10)));  // custom length used
    fs::remove_all(dir);
}

TEST_CASE("bad command lines exit with the config code") {
    CHECK(call({"rollout"}) == 2);                 // missing required --checkpoint
    CHECK(call({"no-such-command"}) == 2);
    CHECK(call({"--version"}) == 0);
}
