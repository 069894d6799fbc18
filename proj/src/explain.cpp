#include "flownav/explain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace flownav::explain {

FeaturePartition FeaturePartition::blocks(int height, int width, int region_h, int region_w) {
    if (height <= 0 || width <= 0 || region_h <= 0 || region_w <= 0)
        throw ConfigError("feature partition: dimensions must be positive");
    FeaturePartition p;
    p.height = height;
    p.width = width;
    p.region_h = region_h;
    p.region_w = region_w;
    const int rx = p.regions_x();
    p.region_of.resize(static_cast<size_t>(height) * width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            p.region_of[static_cast<size_t>(y) * width + x] = (y / region_h) * rx + x / region_w;
    p.num_regions = p.regions_x() * p.regions_y();
    return p;
}

flow::FlowImage mask_observation(const flow::FlowImage& obs, const Coalition& coalition,
                                 const flow::FlowImage& baseline,
                                 const FeaturePartition& partition) {
    if (obs.height != partition.height || obs.width != partition.width ||
        baseline.height != partition.height || baseline.width != partition.width)
        throw NumericError("mask_observation: shape mismatch");
    if (static_cast<int>(coalition.size()) != partition.num_regions)
        throw NumericError("mask_observation: coalition size mismatch");
    flow::FlowImage out = baseline;
    const size_t n = obs.mag.size();
    for (size_t i = 0; i < n; ++i) {
        if (coalition[partition.region_of[i]]) {
            out.mag[i] = obs.mag[i];
            out.dir_x[i] = obs.dir_x[i];
            out.dir_y[i] = obs.dir_y[i];
        }
    }
    return out;
}

double shapley_kernel_weight(int num_regions, int coalition_size) {
    const int m = num_regions, s = coalition_size;
    if (s <= 0 || s >= m) throw NumericError("shapley kernel weight undefined for empty/full");
    double comb = 1.0;
    for (int i = 1; i <= s; ++i) comb *= static_cast<double>(m - i + 1) / i;
    return (m - 1) / (comb * s * (m - s));
}

namespace detail {

std::vector<std::vector<double>> solve_normal_equations(std::vector<double>& ata,
                                                        std::vector<std::vector<double>> rhs,
                                                        int n) {
    std::vector<int> piv(n);
    std::iota(piv.begin(), piv.end(), 0);
    for (int k = 0; k < n; ++k) {
        int best = k;
        double best_abs = std::abs(ata[static_cast<size_t>(k) * n + k]);
        for (int r = k + 1; r < n; ++r) {
            const double a = std::abs(ata[static_cast<size_t>(r) * n + k]);
            if (a > best_abs) {
                best = r;
                best_abs = a;
            }
        }
        if (best_abs < 1e-12) {
            throw NumericError(
                "singular kernel regression system; degenerate coalition column " +
                std::to_string(k) + " (feature never varies across sampled coalitions)");
        }
        if (best != k) {
            for (int c = 0; c < n; ++c)
                std::swap(ata[static_cast<size_t>(k) * n + c], ata[static_cast<size_t>(best) * n + c]);
            for (auto& y : rhs) std::swap(y[k], y[best]);
        }
        const double pivot = ata[static_cast<size_t>(k) * n + k];
        for (int r = k + 1; r < n; ++r) {
            const double factor = ata[static_cast<size_t>(r) * n + k] / pivot;
            if (factor == 0.0) continue;
            ata[static_cast<size_t>(r) * n + k] = 0.0;
            for (int c = k + 1; c < n; ++c)
                ata[static_cast<size_t>(r) * n + c] -= factor * ata[static_cast<size_t>(k) * n + c];
            for (auto& y : rhs) y[r] -= factor * y[k];
        }
    }
    for (auto& y : rhs) {
        for (int k = n - 1; k >= 0; --k) {
            double acc = y[k];
            for (int c = k + 1; c < n; ++c) acc -= ata[static_cast<size_t>(k) * n + c] * y[c];
            y[k] = acc / ata[static_cast<size_t>(k) * n + k];
        }
    }
    return rhs;
}

}  // namespace detail

namespace {

Coalition coalition_from_mask(std::uint32_t mask, int m) {
    Coalition z(m, 0);
    for (int j = 0; j < m; ++j)
        if (mask & (1u << j)) z[j] = 1;
    return z;
}

// Weighted least squares over the given coalitions with the efficiency
// constraint folded in by substituting the last feature.
ShapResult solve_kernel_system(int m, const std::vector<Coalition>& coalitions,
                               const std::vector<double>& weights,
                               const std::vector<std::vector<double>>& fvals,
                               const std::vector<double>& base,
                               const std::vector<double>& fx) {
    const size_t k_out = base.size();
    ShapResult result;
    result.base_value = base;
    result.phi.assign(m, std::vector<double>(k_out, 0.0));
    if (m == 1) {
        for (size_t k = 0; k < k_out; ++k) result.phi[0][k] = fx[k] - base[k];
        return result;
    }

    const int n = m - 1;
    std::vector<double> ata(static_cast<size_t>(n) * n, 0.0);
    std::vector<std::vector<double>> atb(k_out, std::vector<double>(n, 0.0));
    std::vector<double> row(n);
    for (size_t s = 0; s < coalitions.size(); ++s) {
        const Coalition& z = coalitions[s];
        const double w = weights[s];
        const double zl = z[m - 1] ? 1.0 : 0.0;
        for (int j = 0; j < n; ++j) row[j] = (z[j] ? 1.0 : 0.0) - zl;
        for (int r = 0; r < n; ++r) {
            if (row[r] == 0.0) continue;
            const double wr = w * row[r];
            for (int c = 0; c < n; ++c) ata[static_cast<size_t>(r) * n + c] += wr * row[c];
            for (size_t k = 0; k < k_out; ++k) {
                const double target = fvals[s][k] - base[k] - zl * (fx[k] - base[k]);
                atb[k][r] += wr * target;
            }
        }
    }

    const auto solved = detail::solve_normal_equations(ata, std::move(atb), n);
    for (size_t k = 0; k < k_out; ++k) {
        double tail = fx[k] - base[k];
        for (int j = 0; j < n; ++j) {
            result.phi[j][k] = solved[k][j];
            tail -= solved[k][j];
        }
        result.phi[m - 1][k] = tail;  // efficiency holds by construction
    }
    return result;
}

}  // namespace

ShapResult kernel_shap(const ObsModel& model, const flow::FlowImage& obs,
                       const flow::FlowImage& baseline, const FeaturePartition& partition,
                       int n_samples, Rng& rng) {
    const int m = partition.num_regions;
    if (m < 1) throw ConfigError("kernel_shap: need at least one region");

    const std::vector<double> base = model(baseline);
    const std::vector<double> fx = model(obs);
    if (m == 1) {
        std::vector<Coalition> none;
        return solve_kernel_system(m, none, {}, {}, base, fx);
    }

    std::vector<Coalition> coalitions;
    std::vector<double> weights;
    const bool exhaustive = m <= kExhaustiveMaxFeatures;
    if (exhaustive) {
        const std::uint32_t full = (m == 32) ? 0xffffffffu : ((1u << m) - 1);
        for (std::uint32_t mask = 1; mask < full; ++mask) {
            const Coalition z = coalition_from_mask(mask, m);
            const int s = static_cast<int>(std::count(z.begin(), z.end(), 1));
            coalitions.push_back(z);
            weights.push_back(shapley_kernel_weight(m, s));
        }
    } else {
        if (n_samples < 2 * m + 2)
            throw ConfigError("kernel_shap: n_samples must be >= 2M + 2 in sampled mode");
        // Coalition sizes drawn with probability proportional to the total
        // Shapley kernel mass of that size class; paired with complements.
        std::vector<double> class_mass(m);  // index s in [1, m-1]
        double total = 0.0;
        for (int s = 1; s < m; ++s) {
            class_mass[s] = 1.0 / (static_cast<double>(s) * (m - s));
            total += class_mass[s];
        }
        std::vector<int> indices(m);
        std::iota(indices.begin(), indices.end(), 0);
        while (static_cast<int>(coalitions.size()) + 2 <= n_samples) {
            double pick = rng.uniform() * total;
            int s = 1;
            for (; s < m - 1; ++s) {
                if (pick < class_mass[s]) break;
                pick -= class_mass[s];
            }
            for (int i = 0; i < s; ++i) {
                const int j = i + static_cast<int>(rng.uniform_int(m - i));
                std::swap(indices[i], indices[j]);
            }
            Coalition z(m, 0), zc(m, 1);
            for (int i = 0; i < s; ++i) {
                z[indices[i]] = 1;
                zc[indices[i]] = 0;
            }
            coalitions.push_back(std::move(z));
            weights.push_back(1.0);  // inclusion probability already follows the kernel
            coalitions.push_back(std::move(zc));
            weights.push_back(1.0);
        }
    }

    std::vector<std::vector<double>> fvals;
    fvals.reserve(coalitions.size());
    for (const Coalition& z : coalitions)
        fvals.push_back(model(mask_observation(obs, z, baseline, partition)));

    return solve_kernel_system(m, coalitions, weights, fvals, base, fx);
}

ShapResult exact_shapley(const ObsModel& model, const flow::FlowImage& obs,
                         const flow::FlowImage& baseline, const FeaturePartition& partition) {
    const int m = partition.num_regions;
    if (m > kExhaustiveMaxFeatures)
        throw ConfigError("exact_shapley: too many regions (M > 20)");

    // Factorial coalition weights |S|! (M-|S|-1)! / M!.
    std::vector<double> weight_by_size(m);
    for (int s = 0; s < m; ++s) {
        double w = 1.0 / m;  // 1 / (M * C(M-1, s))
        for (int i = 1; i <= s; ++i) w *= static_cast<double>(i) / (m - i);
        weight_by_size[s] = w;
    }

    const std::uint32_t count = 1u << m;
    std::vector<std::vector<double>> fvals(count);
    for (std::uint32_t mask = 0; mask < count; ++mask)
        fvals[mask] = model(mask_observation(obs, coalition_from_mask(mask, m), baseline, partition));

    const size_t k_out = fvals[0].size();
    ShapResult result;
    result.base_value = fvals[0];
    result.phi.assign(m, std::vector<double>(k_out, 0.0));
    for (std::uint32_t mask = 0; mask < count; ++mask) {
        const int s = __builtin_popcount(mask);
        for (int j = 0; j < m; ++j) {
            if (mask & (1u << j)) continue;
            const double w = weight_by_size[s];
            const auto& with_j = fvals[mask | (1u << j)];
            const auto& without_j = fvals[mask];
            for (size_t k = 0; k < k_out; ++k)
                result.phi[j][k] += w * (with_j[k] - without_j[k]);
        }
    }
    return result;
}

std::vector<double> gaussian_smooth(const std::vector<double>& grid, int height, int width,
                                    double sigma) {
    if (sigma < 0.0) throw ConfigError("gaussian_smooth: sigma must be >= 0");
    if (static_cast<int>(grid.size()) != height * width)
        throw NumericError("gaussian_smooth: grid size mismatch");
    if (sigma == 0.0) return grid;

    const int radius = static_cast<int>(std::floor(3.0 * sigma));
    if (radius == 0) return grid;
    std::vector<double> taps(2 * radius + 1);
    for (int k = -radius; k <= radius; ++k)
        taps[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));

    auto pass = [&](const std::vector<double>& in, int n_outer, int n_inner, auto index) {
        std::vector<double> out(in.size());
        for (int o = 0; o < n_outer; ++o) {
            for (int i = 0; i < n_inner; ++i) {
                double acc = 0.0, wsum = 0.0;
                const int lo = std::max(-radius, -i);
                const int hi = std::min(radius, n_inner - 1 - i);
                for (int k = lo; k <= hi; ++k) {
                    const double w = taps[k + radius];
                    acc += w * in[index(o, i + k)];
                    wsum += w;
                }
                out[index(o, i)] = acc / wsum;
            }
        }
        return out;
    };

    // Horizontal then vertical; truncated edge kernels renormalize.
    const auto h = pass(grid, height, width,
                        [width](int row, int col) { return static_cast<size_t>(row) * width + col; });
    return pass(h, width, height,
                [width](int col, int row) { return static_cast<size_t>(row) * width + col; });
}

AttentionMap attention_pipeline(const std::vector<ShapResult>& per_agent,
                                const FeaturePartition& partition, double sigma) {
    if (per_agent.empty()) throw ConfigError("attention_pipeline: need at least one agent");
    const size_t n = partition.region_of.size();
    AttentionMap map;
    map.height = partition.height;
    map.width = partition.width;
    map.sigma = sigma;
    map.agents_averaged = static_cast<int>(per_agent.size());
    map.value.assign(n, 0.0);

    for (const ShapResult& shap : per_agent) {
        if (static_cast<int>(shap.phi.size()) != partition.num_regions)
            throw NumericError("attention_pipeline: inconsistent partitions");
        std::vector<double> region_abs(partition.num_regions, 0.0);
        for (int j = 0; j < partition.num_regions; ++j)
            for (double p : shap.phi[j]) region_abs[j] += std::abs(p);
        std::vector<double> pixels(n);
        for (size_t i = 0; i < n; ++i) pixels[i] = region_abs[partition.region_of[i]];
        pixels = gaussian_smooth(pixels, partition.height, partition.width, sigma);
        for (size_t i = 0; i < n; ++i) map.value[i] += pixels[i];
    }
    const double inv = 1.0 / static_cast<double>(per_agent.size());
    for (double& v : map.value) v *= inv;
    return map;
}

std::vector<int> obstacle_edge_regions(const world::TunnelSpec& tunnel, Vec2 position,
                                       const flow::CameraModel& camera,
                                       const FeaturePartition& partition) {
    const flow::DepthRender render = flow::render_depth_full(tunnel, position, camera);
    const int h = camera.height_px, w = camera.width_px;
    std::set<int> regions;
    auto kind_at = [&](int row, int col) { return render.kind[static_cast<size_t>(row) * w + col]; };
    for (int row = 0; row < h; ++row) {
        for (int col = 0; col < w; ++col) {
            if (kind_at(row, col) != world::HitKind::Obstacle) continue;
            const bool edge = (row > 0 && kind_at(row - 1, col) != world::HitKind::Obstacle) ||
                              (row + 1 < h && kind_at(row + 1, col) != world::HitKind::Obstacle) ||
                              (col > 0 && kind_at(row, col - 1) != world::HitKind::Obstacle) ||
                              (col + 1 < w && kind_at(row, col + 1) != world::HitKind::Obstacle);
            if (edge) regions.insert(partition.region_of[static_cast<size_t>(row) * w + col]);
        }
    }
    return {regions.begin(), regions.end()};
}

std::vector<int> dilate_regions(const std::vector<int>& regions,
                                const FeaturePartition& partition, int ring) {
    const int rx = partition.regions_x();
    const int ry = partition.regions_y();
    std::set<int> out;
    for (int r : regions) {
        const int cy = r / rx, cx = r % rx;
        for (int dy = -ring; dy <= ring; ++dy) {
            for (int dx = -ring; dx <= ring; ++dx) {
                const int y = cy + dy, x = cx + dx;
                if (y >= 0 && y < ry && x >= 0 && x < rx) out.insert(y * rx + x);
            }
        }
    }
    return {out.begin(), out.end()};
}

ExplainTrace collect_explanations(const std::vector<net::Checkpoint>& checkpoints,
                                  int designated, const std::vector<world::TunnelSpec>& library,
                                  std::optional<int> tunnel_id, std::uint64_t seed,
                                  const ExplainOptions& options) {
    if (checkpoints.empty()) throw ConfigError("collect_explanations: no checkpoints");
    if (designated < 0 || designated >= static_cast<int>(checkpoints.size()))
        throw ConfigError("collect_explanations: designated agent out of range");
    const net::NetShape& shape = checkpoints[0].policy.net.shape;
    for (const net::Checkpoint& c : checkpoints) {
        if (!(c.policy.net.shape == shape) || c.mag_clip != checkpoints[0].mag_clip ||
            c.fov_x != checkpoints[0].fov_x)
            throw ConfigError("collect_explanations: checkpoint architecture mismatch");
    }

    const double mag_clip = checkpoints[0].mag_clip;
    env::EnvConfig env_cfg;
    env_cfg.tunnel_id = tunnel_id;
    env_cfg.camera = flow::CameraModel::make(shape.in_w, shape.in_h, checkpoints[0].fov_x);
    env::Env environment(library, env_cfg);

    ExplainTrace trace;
    trace.partition =
        FeaturePartition::blocks(shape.in_h, shape.in_w, options.region_h, options.region_w);

    Rng rng(seed);
    auto [obs, st] = environment.reset(rng.next_u64());
    trace.observations.push_back(obs);
    trace.states.push_back(st);
    const net::PolicyParams& pilot = checkpoints[designated].policy;
    for (int step = 1; step < options.max_steps; ++step) {
        const std::vector<double> x = flow::to_input(trace.observations.back(), mag_clip);
        const net::GaussianActionDist dist = net::policy_forward(pilot, x);
        std::array<double, 2> action = dist.mean;
        if (options.stochastic_policy) action = net::sample_action(dist, rng).first;
        const env::StepResult sr = environment.step({action[0], action[1]});
        if (sr.terminated || sr.truncated) {
            auto [o2, s2] = environment.reset(rng.next_u64());
            trace.observations.push_back(o2);
            trace.states.push_back(s2);
        } else {
            trace.observations.push_back(sr.observation);
            trace.states.push_back(environment.state());
        }
    }

    const flow::FlowImage baseline = flow::FlowImage::zeros(shape.in_h, shape.in_w);
    for (size_t t = 0; t < trace.observations.size(); ++t) {
        std::vector<ShapResult> per_agent;
        per_agent.reserve(checkpoints.size());
        for (const net::Checkpoint& c : checkpoints) {
            const ObsModel model = [&](const flow::FlowImage& img) {
                const net::GaussianActionDist d =
                    net::policy_forward(c.policy, flow::to_input(img, mag_clip));
                return std::vector<double>{d.mean[0], d.mean[1]};
            };
            per_agent.push_back(kernel_shap(model, trace.observations[t], baseline,
                                            trace.partition, options.n_samples, rng));
        }
        AttentionMap map = attention_pipeline(per_agent, trace.partition, options.sigma);
        map.timestep = static_cast<int>(t);
        trace.maps.push_back(std::move(map));
        trace.shap.push_back(std::move(per_agent));
    }
    return trace;
}

}  // namespace flownav::explain
