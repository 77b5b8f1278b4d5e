#pragma once

// Small fully-convolutional 3D segmenter with hand-written reverse mode:
//
//   x -> conv k^3 -> PReLU -> conv k^3 -> PReLU -> conv 1^3 -> softmax
//
// Convolutions are cross-correlations with mirror ("reflect") same-padding.
// Everything is double precision so finite-difference checks stay meaningful.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lobeseg/error.hpp"
#include "lobeseg/grid.hpp"
#include "lobeseg/loss.hpp"
#include "lobeseg/random.hpp"
#include "lobeseg/volume.hpp"

namespace lobeseg {

/// Channel-major stack of 3D grids.
struct Tensor4 {
    std::size_t channels = 0;
    Dims dims;
    std::vector<double> data;

    Tensor4() = default;
    Tensor4(std::size_t c, Dims d, double fill = 0.0) : channels(c), dims(d), data(c * d.count(), fill) {}

    std::size_t voxels() const { return dims.count(); }
    double* channel(std::size_t c) { return data.data() + c * voxels(); }
    const double* channel(std::size_t c) const { return data.data() + c * voxels(); }

    friend bool operator==(const Tensor4&, const Tensor4&) = default;
};

/// Named parameter tensor, shape (c_out, c_in, kx, ky, kz); kx varies fastest.
struct ParamTensor {
    std::string name;
    std::array<std::uint32_t, 5> shape{};
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
    friend bool operator==(const ParamTensor&, const ParamTensor&) = default;
};

struct NetConfig {
    int in_channels = 1;
    int hidden_channels = 8;
    int num_labels = 3;
    int kernel = 3;
    double prelu_init = 0.25;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (in_channels < 1 || hidden_channels < 1) throw ShapeError("net channel counts must be >= 1");
        if (kernel < 1 || kernel % 2 == 0) throw ShapeError("kernel edge must be odd");
        if (num_labels != 3 && num_labels != 4) throw ShapeError("num_labels must be 3 or 4");
    }
};

/// Parameters in fixed order; gradients use the same structure.
struct NetParams {
    enum Index : std::size_t { conv1_w, conv1_b, prelu1, conv2_w, conv2_b, prelu2, conv3_w, conv3_b, count };

    NetConfig config;
    std::vector<ParamTensor> tensors;

    ParamTensor& operator[](Index i) { return tensors[i]; }
    const ParamTensor& operator[](Index i) const { return tensors[i]; }

    std::size_t num_values() const
    {
        std::size_t n = 0;
        for (const auto& t : tensors) n += t.size();
        return n;
    }

    /// Same shapes, all zeros.
    NetParams zeros_like() const
    {
        NetParams z = *this;
        for (auto& t : z.tensors) std::fill(t.values.begin(), t.values.end(), 0.0);
        return z;
    }

    friend bool operator==(const NetParams& a, const NetParams& b) { return a.tensors == b.tensors; }
};

inline NetParams init_params(const NetConfig& cfg)
{
    cfg.validate();
    const auto k = static_cast<std::uint32_t>(cfg.kernel);
    const auto cin = static_cast<std::uint32_t>(cfg.in_channels);
    const auto hid = static_cast<std::uint32_t>(cfg.hidden_channels);
    const auto lab = static_cast<std::uint32_t>(cfg.num_labels);
    NetParams p;
    p.config = cfg;
    auto make = [](std::string name, std::array<std::uint32_t, 5> shape) {
        ParamTensor t;
        t.name = std::move(name);
        t.shape = shape;
        std::size_t n = 1;
        for (auto s : shape) n *= s;
        t.values.assign(n, 0.0);
        return t;
    };
    p.tensors = {
        make("conv1.weight", {hid, cin, k, k, k}), make("conv1.bias", {hid, 1, 1, 1, 1}),
        make("prelu1.slope", {hid, 1, 1, 1, 1}),   make("conv2.weight", {hid, hid, k, k, k}),
        make("conv2.bias", {hid, 1, 1, 1, 1}),     make("prelu2.slope", {hid, 1, 1, 1, 1}),
        make("conv3.weight", {lab, hid, 1, 1, 1}), make("conv3.bias", {lab, 1, 1, 1, 1}),
    };
    // Glorot-uniform weights, zero biases.
    for (std::size_t t : {NetParams::conv1_w, NetParams::conv2_w, NetParams::conv3_w}) {
        auto& w = p.tensors[t];
        const double taps = static_cast<double>(w.shape[2]) * w.shape[3] * w.shape[4];
        const double limit = std::sqrt(6.0 / (taps * w.shape[1] + taps * w.shape[0]));
        CounterRng rng(cfg.seed, 100 + t);
        for (auto& v : w.values) v = rng.uniform(-limit, limit);
    }
    std::fill(p[NetParams::prelu1].values.begin(), p[NetParams::prelu1].values.end(), cfg.prelu_init);
    std::fill(p[NetParams::prelu2].values.begin(), p[NetParams::prelu2].values.end(), cfg.prelu_init);
    return p;
}

/// Maps phantom/CT intensities to O(1) network inputs.
inline double normalize_intensity(double hu) { return (hu + 1000.0) / 400.0; }

inline Tensor4 to_input(const ScalarVolume& image)
{
    Tensor4 t(1, image.dims);
    for (std::size_t i = 0; i < image.size(); ++i) t.data[i] = normalize_intensity(image[i]);
    return t;
}

// ---------------------------------------------------------------------------
// Layers

namespace detail {

inline Dims padded_dims(const Dims& d, std::size_t r) { return {d.x + 2 * r, d.y + 2 * r, d.z + 2 * r}; }

inline Tensor4 mirror_pad(const Tensor4& x, std::size_t r)
{
    if (r == 0) return x;
    const Dims pd = padded_dims(x.dims, r);
    Tensor4 out(x.channels, pd);
    std::vector<std::size_t> mx(pd.x);
    for (std::size_t i = 0; i < pd.x; ++i) mx[i] = mirror_index(static_cast<long>(i) - static_cast<long>(r), x.dims.x);
    for (std::size_t c = 0; c < x.channels; ++c) {
        const double* src = x.channel(c);
        double* dst = out.channel(c);
        for (std::size_t k = 0; k < pd.z; ++k) {
            const std::size_t z = mirror_index(static_cast<long>(k) - static_cast<long>(r), x.dims.z);
            for (std::size_t j = 0; j < pd.y; ++j) {
                const std::size_t y = mirror_index(static_cast<long>(j) - static_cast<long>(r), x.dims.y);
                const double* row = src + x.dims.index(0, y, z);
                double* drow = dst + pd.index(0, j, k);
                for (std::size_t i = 0; i < pd.x; ++i) drow[i] = row[mx[i]];
            }
        }
    }
    return out;
}

/// Adjoint of mirror_pad: folds padded gradients back onto their source voxels.
inline Tensor4 mirror_fold(const Tensor4& g, const Dims& d, std::size_t r)
{
    if (r == 0) return g;
    Tensor4 out(g.channels, d);
    std::vector<std::size_t> mx(g.dims.x);
    for (std::size_t i = 0; i < g.dims.x; ++i) mx[i] = mirror_index(static_cast<long>(i) - static_cast<long>(r), d.x);
    for (std::size_t c = 0; c < g.channels; ++c) {
        const double* src = g.channel(c);
        double* dst = out.channel(c);
        for (std::size_t k = 0; k < g.dims.z; ++k) {
            const std::size_t z = mirror_index(static_cast<long>(k) - static_cast<long>(r), d.z);
            for (std::size_t j = 0; j < g.dims.y; ++j) {
                const std::size_t y = mirror_index(static_cast<long>(j) - static_cast<long>(r), d.y);
                const double* row = src + g.dims.index(0, j, k);
                double* drow = dst + d.index(0, y, z);
                for (std::size_t i = 0; i < g.dims.x; ++i) drow[mx[i]] += row[i];
            }
        }
    }
    return out;
}

inline std::size_t kernel_of(const ParamTensor& w) { return w.shape[2]; }

/// Valid cross-correlation of an already padded input.
inline Tensor4 correlate(const Tensor4& padded, const ParamTensor& w, const ParamTensor& b, const Dims& out_dims)
{
    const std::size_t k = kernel_of(w);
    const std::size_t cout = w.shape[0], cin = w.shape[1];
    const Dims& pd = padded.dims;
    Tensor4 out(cout, out_dims);
    for (std::size_t co = 0; co < cout; ++co) {
        double* o = out.channel(co);
        std::fill(o, o + out.voxels(), b.values[co]);
        for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* in = padded.channel(ci);
            const double* wk = w.values.data() + (co * cin + ci) * k * k * k;
            for (std::size_t kz = 0; kz < k; ++kz)
                for (std::size_t ky = 0; ky < k; ++ky)
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const double wv = wk[(kz * k + ky) * k + kx];
                        for (std::size_t z = 0; z < out_dims.z; ++z)
                            for (std::size_t y = 0; y < out_dims.y; ++y) {
                                double* orow = o + out_dims.index(0, y, z);
                                const double* irow = in + pd.index(kx, y + ky, z + kz);
                                for (std::size_t x = 0; x < out_dims.x; ++x) orow[x] += wv * irow[x];
                            }
                    }
        }
    }
    return out;
}

/// Reverse of correlate: accumulates weight/bias gradients and returns the
/// gradient with respect to the padded input.
inline Tensor4 correlate_backward(const Tensor4& padded, const ParamTensor& w, const Tensor4& gout, ParamTensor& gw,
                                  ParamTensor& gb)
{
    const std::size_t k = kernel_of(w);
    const std::size_t cout = w.shape[0], cin = w.shape[1];
    const Dims& pd = padded.dims;
    const Dims& od = gout.dims;
    Tensor4 gin(cin, pd);
    for (std::size_t co = 0; co < cout; ++co) {
        const double* g = gout.channel(co);
        double bsum = 0.0;
        for (std::size_t i = 0; i < gout.voxels(); ++i) bsum += g[i];
        gb.values[co] += bsum;
        for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* in = padded.channel(ci);
            double* gi = gin.channel(ci);
            const std::size_t base = (co * cin + ci) * k * k * k;
            for (std::size_t kz = 0; kz < k; ++kz)
                for (std::size_t ky = 0; ky < k; ++ky)
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const std::size_t tap = base + (kz * k + ky) * k + kx;
                        const double wv = w.values[tap];
                        double acc = 0.0;
                        for (std::size_t z = 0; z < od.z; ++z)
                            for (std::size_t y = 0; y < od.y; ++y) {
                                const double* grow = g + od.index(0, y, z);
                                const double* irow = in + pd.index(kx, y + ky, z + kz);
                                double* girow = gi + pd.index(kx, y + ky, z + kz);
                                for (std::size_t x = 0; x < od.x; ++x) {
                                    acc += grow[x] * irow[x];
                                    girow[x] += wv * grow[x];
                                }
                            }
                        gw.values[tap] += acc;
                    }
        }
    }
    return gin;
}

} // namespace detail

/// Same-size convolution (cross-correlation) with mirror padding.
inline Tensor4 conv3_forward(const Tensor4& x, const ParamTensor& weights, const ParamTensor& bias)
{
    if (weights.shape[1] != x.channels) throw ShapeError("conv: input channel mismatch");
    if (bias.size() != weights.shape[0]) throw ShapeError("conv: bias length mismatch");
    const std::size_t k = detail::kernel_of(weights);
    if (k % 2 == 0 || weights.shape[3] != k || weights.shape[4] != k) throw ShapeError("conv: kernel must be odd cube");
    return detail::correlate(detail::mirror_pad(x, k / 2), weights, bias, x.dims);
}

inline Tensor4 prelu(const Tensor4& x, const std::vector<double>& slopes)
{
    if (slopes.size() != x.channels) throw ShapeError("prelu: one slope per channel required");
    Tensor4 y = x;
    for (std::size_t c = 0; c < x.channels; ++c) {
        double* v = y.channel(c);
        const double a = slopes[c];
        for (std::size_t i = 0; i < x.voxels(); ++i)
            if (!(v[i] > 0)) v[i] *= a;
    }
    return y;
}

/// Per-voxel softmax over channels, max-subtracted.
inline ProbVolume softmax_channels(const Tensor4& x, Spacing spacing = {})
{
    ProbVolume p(x.dims, spacing, static_cast<int>(x.channels));
    const std::size_t n = x.voxels();
    for (std::size_t i = 0; i < n; ++i) {
        double m = x.channel(0)[i];
        for (std::size_t c = 1; c < x.channels; ++c) m = std::max(m, x.channel(c)[i]);
        double sum = 0.0;
        for (std::size_t c = 0; c < x.channels; ++c) {
            const double e = std::exp(x.channel(c)[i] - m);
            p.at(static_cast<int>(c), i) = e;
            sum += e;
        }
        for (std::size_t c = 0; c < x.channels; ++c) p.at(static_cast<int>(c), i) /= sum;
    }
    return p;
}

// ---------------------------------------------------------------------------
// Network

struct ForwardCache {
    Tensor4 padded_input;
    Tensor4 pre1;
    Tensor4 padded_act1;
    Tensor4 pre2;
    Tensor4 act2;
    ProbVolume prob;
    Dims dims;
};

struct Gradients {
    NetParams params; // same layout as the network parameters
    Tensor4 input;
};

inline ProbVolume forward(const NetParams& p, const Tensor4& x, ForwardCache& cache, Spacing spacing = {})
{
    if (x.channels != static_cast<std::size_t>(p.config.in_channels)) throw ShapeError("forward: input channel mismatch");
    const std::size_t r = detail::kernel_of(p[NetParams::conv1_w]) / 2;
    cache.dims = x.dims;
    cache.padded_input = detail::mirror_pad(x, r);
    cache.pre1 = detail::correlate(cache.padded_input, p[NetParams::conv1_w], p[NetParams::conv1_b], x.dims);
    cache.padded_act1 = detail::mirror_pad(prelu(cache.pre1, p[NetParams::prelu1].values), r);
    cache.pre2 = detail::correlate(cache.padded_act1, p[NetParams::conv2_w], p[NetParams::conv2_b], x.dims);
    cache.act2 = prelu(cache.pre2, p[NetParams::prelu2].values);
    Tensor4 logits = detail::correlate(cache.act2, p[NetParams::conv3_w], p[NetParams::conv3_b], x.dims);
    cache.prob = softmax_channels(logits, spacing);
    return cache.prob;
}

inline ProbVolume forward(const NetParams& p, const Tensor4& x, Spacing spacing = {})
{
    ForwardCache cache;
    return forward(p, x, cache, spacing);
}

namespace detail {

inline Tensor4 prelu_backward(const Tensor4& pre, const std::vector<double>& slopes, const Tensor4& g,
                              std::vector<double>& gslope)
{
    Tensor4 gx(g.channels, g.dims);
    for (std::size_t c = 0; c < g.channels; ++c) {
        const double* x = pre.channel(c);
        const double* gc = g.channel(c);
        double* out = gx.channel(c);
        double acc = 0.0;
        for (std::size_t i = 0; i < g.voxels(); ++i) {
            if (x[i] > 0) {
                out[i] = gc[i];
            } else {
                out[i] = slopes[c] * gc[i];
                acc += gc[i] * x[i];
            }
        }
        gslope[c] += acc;
    }
    return gx;
}

} // namespace detail

/// Reverse-mode gradients of forward() given dLoss/dProb.
inline Gradients backward(const NetParams& p, const ForwardCache& cache, const ProbVolume& upstream)
{
    if (cache.prob.data.empty()) throw NumericError("backward: no forward pass cached");
    if (!(upstream.dims == cache.prob.dims) || upstream.num_labels != cache.prob.num_labels)
        throw ShapeError("backward: upstream gradient shape mismatch");
    const std::size_t r = detail::kernel_of(p[NetParams::conv1_w]) / 2;
    Gradients g;
    g.params = p.zeros_like();

    // Softmax: dz_c = p_c (g_c - sum_k g_k p_k).
    const std::size_t n = cache.prob.voxels();
    const auto labels = static_cast<std::size_t>(cache.prob.num_labels);
    Tensor4 glogits(labels, cache.dims);
    for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t c = 0; c < labels; ++c)
            dot += upstream.at(static_cast<int>(c), i) * cache.prob.at(static_cast<int>(c), i);
        for (std::size_t c = 0; c < labels; ++c) {
            const int l = static_cast<int>(c);
            glogits.channel(c)[i] = cache.prob.at(l, i) * (upstream.at(l, i) - dot);
        }
    }
    Tensor4 gact2 = detail::correlate_backward(cache.act2, p[NetParams::conv3_w], glogits, g.params[NetParams::conv3_w],
                                               g.params[NetParams::conv3_b]);
    Tensor4 gpre2 = detail::prelu_backward(cache.pre2, p[NetParams::prelu2].values, gact2,
                                           g.params[NetParams::prelu2].values);
    Tensor4 gpad1 = detail::correlate_backward(cache.padded_act1, p[NetParams::conv2_w], gpre2,
                                               g.params[NetParams::conv2_w], g.params[NetParams::conv2_b]);
    Tensor4 gact1 = detail::mirror_fold(gpad1, cache.dims, r);
    Tensor4 gpre1 = detail::prelu_backward(cache.pre1, p[NetParams::prelu1].values, gact1,
                                           g.params[NetParams::prelu1].values);
    Tensor4 gpad0 = detail::correlate_backward(cache.padded_input, p[NetParams::conv1_w], gpre1,
                                               g.params[NetParams::conv1_w], g.params[NetParams::conv1_b]);
    g.input = detail::mirror_fold(gpad0, cache.dims, r);
    return g;
}

/// Stateful wrapper that remembers the last forward pass.
class SegNet {
public:
    explicit SegNet(NetParams params) : params_(std::move(params)) {}

    const NetParams& params() const { return params_; }
    NetParams& params() { return params_; }

    ProbVolume forward(const Tensor4& x, Spacing spacing = {})
    {
        cache_.emplace();
        return lobeseg::forward(params_, x, *cache_, spacing);
    }

    Gradients backward(const ProbVolume& upstream) const
    {
        if (!cache_) throw NumericError("SegNet::backward called before forward");
        return lobeseg::backward(params_, *cache_, upstream);
    }

private:
    NetParams params_;
    std::optional<ForwardCache> cache_;
};

inline void accumulate(NetParams& into, const NetParams& g)
{
    for (std::size_t t = 0; t < into.tensors.size(); ++t)
        for (std::size_t i = 0; i < into.tensors[t].size(); ++i) into.tensors[t].values[i] += g.tensors[t].values[i];
}

// ---------------------------------------------------------------------------
// Parameter file: "FWNET1", then per tensor: u32 name length, name bytes,
// u32 c_out, c_in, kx, ky, kz, then the float32 values (kx fastest). All
// integers and floats little-endian.

inline void save_params(const NetParams& p, const std::filesystem::path& path)
{
    std::string out = "FWNET1";
    auto put_u32 = [&](std::uint32_t v) {
        for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
    };
    for (const auto& t : p.tensors) {
        put_u32(static_cast<std::uint32_t>(t.name.size()));
        out += t.name;
        for (auto s : t.shape) put_u32(s);
        for (double v : t.values) {
            const float f = static_cast<float>(v);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(bits);
        }
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to " + path.string());
}

inline NetParams load_params(const std::filesystem::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.rfind("FWNET1", 0) != 0) throw FormatError(path.string() + ": bad magic, expected FWNET1");
    std::size_t pos = 6;
    auto get_u32 = [&]() {
        if (pos + 4 > bytes.size()) throw FormatError(path.string() + ": truncated parameter file");
        std::uint32_t v = 0;
        for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + b])) << (8 * b);
        pos += 4;
        return v;
    };
    std::vector<ParamTensor> tensors;
    while (pos < bytes.size()) {
        ParamTensor t;
        const std::uint32_t len = get_u32();
        if (pos + len > bytes.size()) throw FormatError(path.string() + ": truncated tensor name");
        t.name = bytes.substr(pos, len);
        pos += len;
        std::size_t n = 1;
        for (auto& s : t.shape) {
            s = get_u32();
            n *= s;
        }
        t.values.resize(n);
        for (auto& v : t.values) {
            const std::uint32_t bits = get_u32();
            float fl;
            std::memcpy(&fl, &bits, 4);
            v = fl;
        }
        tensors.push_back(std::move(t));
    }
    static const char* kNames[] = {"conv1.weight", "conv1.bias",   "prelu1.slope", "conv2.weight",
                                   "conv2.bias",   "prelu2.slope", "conv3.weight", "conv3.bias"};
    if (tensors.size() != NetParams::count) throw FormatError(path.string() + ": expected 8 tensors");
    for (std::size_t i = 0; i < tensors.size(); ++i)
        if (tensors[i].name != kNames[i]) throw FormatError(path.string() + ": unexpected tensor " + tensors[i].name);
    NetParams p;
    p.config.in_channels = static_cast<int>(tensors[NetParams::conv1_w].shape[1]);
    p.config.hidden_channels = static_cast<int>(tensors[NetParams::conv1_w].shape[0]);
    p.config.kernel = static_cast<int>(tensors[NetParams::conv1_w].shape[2]);
    p.config.num_labels = static_cast<int>(tensors[NetParams::conv3_w].shape[0]);
    p.config.validate();
    p.tensors = std::move(tensors);
    return p;
}

} // namespace lobeseg
