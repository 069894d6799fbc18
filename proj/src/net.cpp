#include "flownav/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace flownav::net {

void NetShape::validate() const {
    if (in_c <= 0 || in_h <= 0 || in_w <= 0 || conv_channels <= 0 || hidden <= 0 || out <= 0)
        throw ConfigError("net shape: all dimensions must be positive");
    if (kernel <= 0 || stride <= 0) throw ConfigError("net shape: bad kernel/stride");
    if (kernel > in_h || kernel > in_w)
        throw ConfigError("net shape: kernel larger than input");
}

long NetShape::param_count() const {
    const long conv = static_cast<long>(conv_channels) * in_c * kernel * kernel + conv_channels;
    const long fc1 = static_cast<long>(hidden) * conv_feat() + hidden;
    const long fc2 = static_cast<long>(out) * hidden + out;
    return conv + fc1 + fc2;
}

NetShape NetShape::for_image(int height, int width, int out) {
    NetShape s;
    s.in_h = height;
    s.in_w = width;
    s.out = out;
    // Shrink kernel/stride/hidden for small test resolutions.
    if (s.kernel > height || s.kernel > width) {
        s.kernel = std::min({8, height, width});
        s.stride = std::max(1, s.kernel / 2);
        s.hidden = std::min(64, 8 * s.kernel);
    }
    s.validate();
    return s;
}

NetParams NetParams::zeros(const NetShape& shape) {
    shape.validate();
    NetParams p;
    p.shape = shape;
    p.conv_w.assign(static_cast<size_t>(shape.conv_channels) * shape.in_c * shape.kernel * shape.kernel, 0.0);
    p.conv_b.assign(shape.conv_channels, 0.0);
    p.fc1_w.assign(static_cast<size_t>(shape.hidden) * shape.conv_feat(), 0.0);
    p.fc1_b.assign(shape.hidden, 0.0);
    p.fc2_w.assign(static_cast<size_t>(shape.out) * shape.hidden, 0.0);
    p.fc2_b.assign(shape.out, 0.0);
    return p;
}

namespace {

// Rows drawn Gaussian, Gram-Schmidt orthogonalized, then scaled by `gain`.
// When rows > cols the tail rows fall back to scaled random directions.
void orthogonal_rows(std::vector<double>& w, int rows, int cols, double gain, Rng& rng) {
    for (double& x : w) x = rng.normal();
    for (int r = 0; r < rows; ++r) {
        double* row = w.data() + static_cast<size_t>(r) * cols;
        for (int p = 0; p < r && p < cols; ++p) {
            const double* prev = w.data() + static_cast<size_t>(p) * cols;
            double dot = 0.0;
            for (int c = 0; c < cols; ++c) dot += row[c] * prev[c];
            for (int c = 0; c < cols; ++c) row[c] -= dot * prev[c];
        }
        double norm = 0.0;
        for (int c = 0; c < cols; ++c) norm += row[c] * row[c];
        norm = std::sqrt(norm);
        if (norm < 1e-12) {  // degenerate row; re-draw
            for (int c = 0; c < cols; ++c) row[c] = rng.normal();
            norm = 0.0;
            for (int c = 0; c < cols; ++c) norm += row[c] * row[c];
            norm = std::sqrt(norm);
        }
        for (int c = 0; c < cols; ++c) row[c] /= norm;
    }
    for (double& x : w) x *= gain;
}

}  // namespace

NetParams NetParams::init(const NetShape& shape, Rng& rng, double out_gain) {
    NetParams p = zeros(shape);
    const int fan_conv = shape.in_c * shape.kernel * shape.kernel;
    orthogonal_rows(p.conv_w, shape.conv_channels, fan_conv, std::sqrt(2.0), rng);
    orthogonal_rows(p.fc1_w, shape.hidden, shape.conv_feat(), std::sqrt(2.0), rng);
    orthogonal_rows(p.fc2_w, shape.out, shape.hidden, out_gain, rng);
    return p;
}

std::vector<double> net_forward(const NetParams& params, std::span<const double> input,
                                ForwardCache* cache) {
    const NetShape& s = params.shape;
    if (static_cast<int>(input.size()) != s.input_size())
        throw NumericError("net_forward: input size mismatch");

    const int oh = s.conv_out_h(), ow = s.conv_out_w();
    const int feat = s.conv_feat();
    std::vector<double> conv_z(feat), conv_a(feat);

    // Convolution. Inner loop runs along kx so input reads are contiguous.
    for (int oc = 0; oc < s.conv_channels; ++oc) {
        const double* wc = params.conv_w.data() +
                           static_cast<size_t>(oc) * s.in_c * s.kernel * s.kernel;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                double acc = params.conv_b[oc];
                for (int ic = 0; ic < s.in_c; ++ic) {
                    const double* plane = input.data() + static_cast<size_t>(ic) * s.in_h * s.in_w;
                    const double* wk = wc + static_cast<size_t>(ic) * s.kernel * s.kernel;
                    for (int ky = 0; ky < s.kernel; ++ky) {
                        const double* irow = plane +
                                             static_cast<size_t>(oy * s.stride + ky) * s.in_w +
                                             ox * s.stride;
                        const double* wrow = wk + static_cast<size_t>(ky) * s.kernel;
                        double dot = 0.0;
                        for (int kx = 0; kx < s.kernel; ++kx) dot += wrow[kx] * irow[kx];
                        acc += dot;
                    }
                }
                const int j = (oc * oh + oy) * ow + ox;
                conv_z[j] = acc;
                conv_a[j] = acc > 0.0 ? acc : 0.0;
            }
        }
    }

    std::vector<double> fc1_a(s.hidden);
    for (int h = 0; h < s.hidden; ++h) {
        const double* wrow = params.fc1_w.data() + static_cast<size_t>(h) * feat;
        double acc = params.fc1_b[h];
        for (int j = 0; j < feat; ++j) acc += wrow[j] * conv_a[j];
        fc1_a[h] = std::tanh(acc);
    }

    std::vector<double> out(s.out);
    for (int o = 0; o < s.out; ++o) {
        const double* wrow = params.fc2_w.data() + static_cast<size_t>(o) * s.hidden;
        double acc = params.fc2_b[o];
        for (int h = 0; h < s.hidden; ++h) acc += wrow[h] * fc1_a[h];
        out[o] = acc;
    }

    if (cache) {
        cache->input.assign(input.begin(), input.end());
        cache->conv_z = std::move(conv_z);
        cache->conv_a = std::move(conv_a);
        cache->fc1_a = fc1_a;
        cache->out = out;
        cache->valid = true;
    }
    return out;
}

NetGrads NetGrads::zeros(const NetShape& shape) {
    NetParams p = NetParams::zeros(shape);
    NetGrads g;
    g.conv_w = std::move(p.conv_w);
    g.conv_b = std::move(p.conv_b);
    g.fc1_w = std::move(p.fc1_w);
    g.fc1_b = std::move(p.fc1_b);
    g.fc2_w = std::move(p.fc2_w);
    g.fc2_b = std::move(p.fc2_b);
    return g;
}

void NetGrads::add_scaled(const NetGrads& other, double scale) {
    auto axpy = [scale](std::vector<double>& a, const std::vector<double>& b) {
        for (size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
    };
    axpy(conv_w, other.conv_w);
    axpy(conv_b, other.conv_b);
    axpy(fc1_w, other.fc1_w);
    axpy(fc1_b, other.fc1_b);
    axpy(fc2_w, other.fc2_w);
    axpy(fc2_b, other.fc2_b);
}

void net_backward(const NetParams& params, const ForwardCache& cache,
                  std::span<const double> d_out, NetGrads& accum) {
    if (!cache.valid) throw std::logic_error("net_backward: no cached forward pass");
    const NetShape& s = params.shape;
    if (static_cast<int>(d_out.size()) != s.out)
        throw NumericError("net_backward: upstream gradient size mismatch");

    const int feat = s.conv_feat();
    const int oh = s.conv_out_h(), ow = s.conv_out_w();

    // Output layer.
    std::vector<double> d_fc1_a(s.hidden, 0.0);
    for (int o = 0; o < s.out; ++o) {
        const double g = d_out[o];
        accum.fc2_b[o] += g;
        double* wg = accum.fc2_w.data() + static_cast<size_t>(o) * s.hidden;
        const double* w = params.fc2_w.data() + static_cast<size_t>(o) * s.hidden;
        for (int h = 0; h < s.hidden; ++h) {
            wg[h] += g * cache.fc1_a[h];
            d_fc1_a[h] += g * w[h];
        }
    }

    // Hidden dense layer through Tanh.
    std::vector<double> d_conv_a(feat, 0.0);
    for (int h = 0; h < s.hidden; ++h) {
        const double a = cache.fc1_a[h];
        const double gz = d_fc1_a[h] * (1.0 - a * a);
        if (gz == 0.0) continue;
        accum.fc1_b[h] += gz;
        double* wg = accum.fc1_w.data() + static_cast<size_t>(h) * feat;
        const double* w = params.fc1_w.data() + static_cast<size_t>(h) * feat;
        for (int j = 0; j < feat; ++j) {
            wg[j] += gz * cache.conv_a[j];
            d_conv_a[j] += gz * w[j];
        }
    }

    // Convolution through ReLU. The input never needs a gradient.
    for (int oc = 0; oc < s.conv_channels; ++oc) {
        double* wgc = accum.conv_w.data() + static_cast<size_t>(oc) * s.in_c * s.kernel * s.kernel;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const int j = (oc * oh + oy) * ow + ox;
                if (cache.conv_z[j] <= 0.0) continue;
                const double gz = d_conv_a[j];
                if (gz == 0.0) continue;
                accum.conv_b[oc] += gz;
                for (int ic = 0; ic < s.in_c; ++ic) {
                    const double* plane = cache.input.data() +
                                          static_cast<size_t>(ic) * s.in_h * s.in_w;
                    double* wk = wgc + static_cast<size_t>(ic) * s.kernel * s.kernel;
                    for (int ky = 0; ky < s.kernel; ++ky) {
                        const double* irow = plane +
                                             static_cast<size_t>(oy * s.stride + ky) * s.in_w +
                                             ox * s.stride;
                        double* wrow = wk + static_cast<size_t>(ky) * s.kernel;
                        for (int kx = 0; kx < s.kernel; ++kx) wrow[kx] += gz * irow[kx];
                    }
                }
            }
        }
    }
}

PolicyParams make_policy(const NetShape& shape, Rng& rng) {
    PolicyParams p;
    p.net = NetParams::init(shape, rng, 0.01);
    p.log_std.assign(shape.out, kLogStdInit);
    return p;
}

ValueParams make_value(const NetShape& shape, Rng& rng) {
    NetShape vs = shape;
    vs.out = 1;
    return ValueParams{NetParams::init(vs, rng, 1.0)};
}

GaussianActionDist policy_forward(const PolicyParams& params, std::span<const double> input,
                                  ForwardCache* cache) {
    const std::vector<double> mean = net_forward(params.net, input, cache);
    GaussianActionDist dist;
    dist.mean = {mean[0], mean[1]};
    dist.std = {std::exp(params.log_std[0]), std::exp(params.log_std[1])};
    return dist;
}

double value_forward(const ValueParams& params, std::span<const double> input,
                     ForwardCache* cache) {
    return net_forward(params.net, input, cache)[0];
}

std::pair<std::array<double, 2>, double> sample_action(const GaussianActionDist& dist, Rng& rng) {
    std::array<double, 2> a;
    for (int i = 0; i < 2; ++i) a[i] = dist.mean[i] + dist.std[i] * rng.normal();
    return {a, log_prob(dist, a)};
}

double log_prob(const GaussianActionDist& dist, const std::array<double, 2>& action) {
    double lp = 0.0;
    for (int i = 0; i < 2; ++i) {
        const double z = (action[i] - dist.mean[i]) / dist.std[i];
        lp += -0.5 * z * z - std::log(dist.std[i]) - 0.5 * std::log(2.0 * M_PI);
    }
    return lp;
}

double entropy(const GaussianActionDist& dist) {
    double h = 0.0;
    for (int i = 0; i < 2; ++i)
        h += std::log(dist.std[i]) + 0.5 * (1.0 + std::log(2.0 * M_PI));
    return h;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'F', 'N', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u32(out, static_cast<std::uint32_t>(bits & 0xffffffffull));
    put_u32(out, static_cast<std::uint32_t>(bits >> 32));
}

struct Reader {
    const std::string& bytes;
    size_t pos = 0;

    std::uint32_t u32() {
        if (pos + 4 > bytes.size()) throw IoError("checkpoint truncated");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    double f64() {
        const std::uint64_t lo = u32();
        const std::uint64_t hi = u32();
        const std::uint64_t bits = lo | (hi << 32);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
};

void put_params(std::string& out, const std::vector<double>& v) {
    for (double x : v) put_f32(out, static_cast<float>(x));
}

void read_params(Reader& r, std::vector<double>& v) {
    for (double& x : v) x = static_cast<double>(r.f32());
}

void put_shape(std::string& out, const NetShape& s) {
    put_u32(out, static_cast<std::uint32_t>(s.in_c));
    put_u32(out, static_cast<std::uint32_t>(s.in_h));
    put_u32(out, static_cast<std::uint32_t>(s.in_w));
    put_u32(out, static_cast<std::uint32_t>(s.conv_channels));
    put_u32(out, static_cast<std::uint32_t>(s.kernel));
    put_u32(out, static_cast<std::uint32_t>(s.stride));
    put_u32(out, static_cast<std::uint32_t>(s.hidden));
    put_u32(out, static_cast<std::uint32_t>(s.out));
}

NetShape read_shape(Reader& r) {
    NetShape s;
    s.in_c = static_cast<int>(r.u32());
    s.in_h = static_cast<int>(r.u32());
    s.in_w = static_cast<int>(r.u32());
    s.conv_channels = static_cast<int>(r.u32());
    s.kernel = static_cast<int>(r.u32());
    s.stride = static_cast<int>(r.u32());
    s.hidden = static_cast<int>(r.u32());
    s.out = static_cast<int>(r.u32());
    try {
        s.validate();
    } catch (const ConfigError& e) {
        throw IoError(std::string("checkpoint fingerprint invalid: ") + e.what());
    }
    return s;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    put_shape(out, ckpt.policy.net.shape);
    put_shape(out, ckpt.value.net.shape);
    put_f64(out, ckpt.mag_clip);
    put_f64(out, ckpt.fov_x);
    const NetParams& p = ckpt.policy.net;
    put_params(out, p.conv_w);
    put_params(out, p.conv_b);
    put_params(out, p.fc1_w);
    put_params(out, p.fc1_b);
    put_params(out, p.fc2_w);
    put_params(out, p.fc2_b);
    put_params(out, ckpt.policy.log_std);
    const NetParams& v = ckpt.value.net;
    put_params(out, v.conv_w);
    put_params(out, v.conv_b);
    put_params(out, v.fc1_w);
    put_params(out, v.fc1_b);
    put_params(out, v.fc2_w);
    put_params(out, v.fc2_b);
    return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
    Reader r{bytes};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw IoError("not a checkpoint file (bad magic)");
    r.pos = 4;
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));

    Checkpoint ckpt;
    const NetShape ps = read_shape(r);
    const NetShape vs = read_shape(r);
    if (vs.out != 1) throw IoError("checkpoint fingerprint invalid: value head must be 1-D");
    ckpt.mag_clip = r.f64();
    ckpt.fov_x = r.f64();
    const size_t expected = r.pos + 4 * (static_cast<size_t>(ps.param_count()) + ps.out +
                                         static_cast<size_t>(vs.param_count()));
    if (bytes.size() < expected) throw IoError("checkpoint truncated");
    if (bytes.size() > expected) throw IoError("checkpoint has trailing bytes");
    ckpt.policy.net = NetParams::zeros(ps);
    ckpt.policy.log_std.assign(ps.out, 0.0);
    ckpt.value.net = NetParams::zeros(vs);
    NetParams& p = ckpt.policy.net;
    read_params(r, p.conv_w);
    read_params(r, p.conv_b);
    read_params(r, p.fc1_w);
    read_params(r, p.fc1_b);
    read_params(r, p.fc2_w);
    read_params(r, p.fc2_b);
    read_params(r, ckpt.policy.log_std);
    NetParams& v = ckpt.value.net;
    read_params(r, v.conv_w);
    read_params(r, v.conv_b);
    read_params(r, v.fc1_w);
    read_params(r, v.fc1_b);
    read_params(r, v.fc2_w);
    read_params(r, v.fc2_b);
    if (r.pos != bytes.size()) throw IoError("checkpoint has trailing bytes");
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint: " + path);
    const std::string bytes = serialize_checkpoint(ckpt);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f.good()) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace flownav::net
