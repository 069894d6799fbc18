#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "flownav/common.hpp"

namespace flownav::net {

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kLogStdInit = -0.6931471805599453;  // log(0.5)

// Conv(3->8, 8x8, stride 4) + ReLU, Dense(->64) + Tanh, linear output head.
// All fields configurable so tests can run tiny instances.
struct NetShape {
    int in_c = 3;
    int in_h = 48;
    int in_w = 64;
    int conv_channels = 8;
    int kernel = 8;
    int stride = 4;
    int hidden = 64;
    int out = 2;

    void validate() const;
    int conv_out_h() const { return (in_h - kernel) / stride + 1; }
    int conv_out_w() const { return (in_w - kernel) / stride + 1; }
    int conv_feat() const { return conv_channels * conv_out_h() * conv_out_w(); }
    int input_size() const { return in_c * in_h * in_w; }
    long param_count() const;
    bool operator==(const NetShape&) const = default;

    static NetShape for_image(int height, int width, int out);
};

// All learnable weights of one network. Layouts (row-major):
//   conv_w[oc][ic][ky][kx], conv_b[oc],
//   fc1_w[h][feat], fc1_b[h], fc2_w[o][h], fc2_b[o].
struct NetParams {
    NetShape shape;
    std::vector<double> conv_w, conv_b, fc1_w, fc1_b, fc2_w, fc2_b;

    static NetParams zeros(const NetShape& shape);
    // Orthogonalized scaled random init, biases zero; the output layer is
    // scaled by out_gain.
    static NetParams init(const NetShape& shape, Rng& rng, double out_gain);
    bool operator==(const NetParams&) const = default;
};

// Intermediate activations kept for the backward pass.
struct ForwardCache {
    std::vector<double> input;
    std::vector<double> conv_z;  // pre-ReLU
    std::vector<double> conv_a;
    std::vector<double> fc1_a;   // post-Tanh
    std::vector<double> out;
    bool valid = false;
};

// Pure forward pass; fills `cache` when given.
std::vector<double> net_forward(const NetParams& params, std::span<const double> input,
                                ForwardCache* cache = nullptr);

struct NetGrads {
    std::vector<double> conv_w, conv_b, fc1_w, fc1_b, fc2_w, fc2_b;

    static NetGrads zeros(const NetShape& shape);
    void add_scaled(const NetGrads& other, double scale);
};

// Accumulates exact gradients of sum(d_out . out) into `accum`.
// Throws std::logic_error when the cache was not filled by a forward pass.
void net_backward(const NetParams& params, const ForwardCache& cache,
                  std::span<const double> d_out, NetGrads& accum);

struct PolicyParams {
    NetParams net;
    std::vector<double> log_std;  // size 2, clamped to [kLogStdMin, kLogStdMax]

    bool operator==(const PolicyParams&) const = default;
};

struct ValueParams {
    NetParams net;
    bool operator==(const ValueParams&) const = default;
};

PolicyParams make_policy(const NetShape& shape, Rng& rng);
ValueParams make_value(const NetShape& shape, Rng& rng);

// Diagonal Gaussian over 2-D accelerations.
struct GaussianActionDist {
    std::array<double, 2> mean{0.0, 0.0};
    std::array<double, 2> std{1.0, 1.0};
};

GaussianActionDist policy_forward(const PolicyParams& params, std::span<const double> input,
                                  ForwardCache* cache = nullptr);
double value_forward(const ValueParams& params, std::span<const double> input,
                     ForwardCache* cache = nullptr);

// Draws a ~ N(mean, diag(std^2)). The log-density is evaluated at the raw
// (unclamped) sample; the environment clamps afterwards.
std::pair<std::array<double, 2>, double> sample_action(const GaussianActionDist& dist, Rng& rng);

double log_prob(const GaussianActionDist& dist, const std::array<double, 2>& action);
double entropy(const GaussianActionDist& dist);

// Checkpoint: both networks plus the observation contract they were trained
// with. Serialized parameters are little-endian 32-bit floats in layer order
// (policy conv/fc1/fc2 then log_std, then the value network).
struct Checkpoint {
    PolicyParams policy;
    ValueParams value;
    double mag_clip = 0.0;
    double fov_x = 0.0;

    bool operator==(const Checkpoint&) const = default;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
// Throws IoError on corrupt, truncated, or oversized data.
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace flownav::net
