#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "flownav/env.hpp"
#include "flownav/flow.hpp"
#include "flownav/net.hpp"

namespace flownav::explain {

// Exhaustive coalition enumeration is used whenever 2^M fits this bound.
inline constexpr int kExhaustiveMaxFeatures = 20;

// Partition of the image into rectangular pixel regions (features).
struct FeaturePartition {
    int height = 0;       // image height
    int width = 0;        // image width
    int region_h = 8;     // region size in pixels
    int region_w = 8;
    std::vector<int> region_of;  // pixel -> region id, row-major
    int num_regions = 0;

    static FeaturePartition blocks(int height, int width, int region_h, int region_w);
    int regions_x() const { return (width + region_w - 1) / region_w; }
    int regions_y() const { return (height + region_h - 1) / region_h; }
    bool operator==(const FeaturePartition&) const = default;
};

using Coalition = std::vector<std::uint8_t>;  // one flag per region

// Pixels of present regions from obs, absent regions from baseline, in all
// three channels. Throws NumericError on shape mismatch.
flow::FlowImage mask_observation(const flow::FlowImage& obs, const Coalition& coalition,
                                 const flow::FlowImage& baseline,
                                 const FeaturePartition& partition);

// Per-region attributions for each of the K model outputs.
struct ShapResult {
    std::vector<std::vector<double>> phi;  // [region][output]
    std::vector<double> base_value;        // model at the baseline
};

using ObsModel = std::function<std::vector<double>(const flow::FlowImage&)>;

// Shapley kernel weight (M-1) / (C(M,s) * s * (M-s)) for coalition size s.
double shapley_kernel_weight(int num_regions, int coalition_size);

namespace detail {
// Solves (A^T W A) x = rhs_k for each rhs via LU with partial pivoting;
// `ata` is n x n row-major and is destroyed. Throws NumericError on a
// singular system, naming the degenerate column.
std::vector<std::vector<double>> solve_normal_equations(std::vector<double>& ata,
                                                        std::vector<std::vector<double>> rhs,
                                                        int n);
}  // namespace detail

// Kernel-based Shapley estimation: coalitions weighted by the Shapley
// kernel, empty/full enforced as constraints, weighted least squares for
// phi. Exhaustive (and exact) when 2^M <= 2^kExhaustiveMaxFeatures;
// otherwise paired sampling of n_samples coalitions.
ShapResult kernel_shap(const ObsModel& model, const flow::FlowImage& obs,
                       const flow::FlowImage& baseline, const FeaturePartition& partition,
                       int n_samples, Rng& rng);

// Classic Shapley sum over all coalitions; the test oracle. M <= 20.
ShapResult exact_shapley(const ObsModel& model, const flow::FlowImage& obs,
                         const flow::FlowImage& baseline, const FeaturePartition& partition);

// Separable Gaussian blur, kernel truncated at 3*sigma, truncated kernels
// renormalized at the edges. sigma = 0 is the identity.
std::vector<double> gaussian_smooth(const std::vector<double>& grid, int height, int width,
                                    double sigma);

// Per-pixel aggregate of absolute Shapley values.
struct AttentionMap {
    int height = 0;
    int width = 0;
    std::vector<double> value;  // nonnegative
    double sigma = 0.0;
    int agents_averaged = 0;
    int timestep = -1;
};

// Per agent: sum |phi| over outputs, broadcast regions to pixels, smooth;
// then average pixelwise across agents.
AttentionMap attention_pipeline(const std::vector<ShapResult>& per_agent,
                                const FeaturePartition& partition, double sigma);

struct ExplainOptions {
    int max_steps = 64;           // rollout length cap
    double sigma = 4.0;           // smoothing, pixels
    int region_h = 8;
    int region_w = 8;
    int n_samples = 4096;
    bool stochastic_policy = false;
};

struct ExplainTrace {
    std::vector<flow::FlowImage> observations;          // acted-on observation per step
    std::vector<env::KinematicState> states;            // state the observation was rendered from
    std::vector<AttentionMap> maps;                     // averaged across agents, one per step
    std::vector<std::vector<ShapResult>> shap;          // [timestep][agent]
    FeaturePartition partition;
};

// Rolls out the designated agent (checkpoints[designated]); for every
// recorded observation runs kernel_shap against each agent's policy-mean
// outputs and aggregates them into one AttentionMap per timestep.
// Throws ConfigError when checkpoint architectures disagree.
ExplainTrace collect_explanations(const std::vector<net::Checkpoint>& checkpoints,
                                  int designated, const std::vector<world::TunnelSpec>& library,
                                  std::optional<int> tunnel_id, std::uint64_t seed,
                                  const ExplainOptions& options);

// Region ids holding an obstacle silhouette edge as seen from `position`
// (a pixel whose ray hits an obstacle next to a pixel whose ray does not).
std::vector<int> obstacle_edge_regions(const world::TunnelSpec& tunnel, Vec2 position,
                                       const flow::CameraModel& camera,
                                       const FeaturePartition& partition);

// Region ids within Chebyshev distance `ring` of any of the given regions.
std::vector<int> dilate_regions(const std::vector<int>& regions,
                                const FeaturePartition& partition, int ring);

}  // namespace flownav::explain
