#pragma once

// Patch-based plain SGD training and tiled inference for SegNet.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "lobeseg/error.hpp"
#include "lobeseg/grid.hpp"
#include "lobeseg/loss.hpp"
#include "lobeseg/phantom.hpp"
#include "lobeseg/random.hpp"
#include "lobeseg/segnet.hpp"
#include "lobeseg/weighting.hpp"

namespace lobeseg {

struct TrainConfig {
    double learning_rate = 0.005;
    int batch_size = 2;
    int iterations = 2000;
    PatchLayout layout{16, 4};
    std::uint64_t seed = 0;
    WeightParams weights{};

    void validate() const
    {
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ShapeError("learning_rate must be >= 0");
        if (batch_size < 1) throw ShapeError("batch_size must be >= 1");
        if (iterations < 0) throw ShapeError("iterations must be >= 0");
        if (!layout.valid()) throw ShapeError("invalid patch layout");
    }
};

struct TrainingCase {
    ScalarVolume image;
    LabelVolume ref;
    Mask lung;
};

inline TrainingCase to_training_case(const PhantomCase& c) { return {c.image, c.ref, c.lung}; }

struct TrainResult {
    NetParams params;
    std::vector<double> loss_history; // mean batch loss per iteration
};

/// One precomputed training patch: padded input window plus core targets.
struct TrainingPatch {
    PatchDescriptor desc;
    Tensor4 input;
    LabelVolume ref;
    WeightVolume weight;
};

namespace detail {

inline ProbVolume crop_core(const ProbVolume& window, const PatchDescriptor& d)
{
    const auto o = core_offset(d);
    ProbVolume out(Dims{d.core_size[0], d.core_size[1], d.core_size[2]}, window.spacing, window.num_labels);
    for (int l = 0; l < window.num_labels; ++l)
        for (std::size_t k = 0; k < d.core_size[2]; ++k)
            for (std::size_t j = 0; j < d.core_size[1]; ++j)
                for (std::size_t i = 0; i < d.core_size[0]; ++i)
                    out.at(l, out.dims.index(i, j, k)) = window.at(l, window.dims.index(i + o[0], j + o[1], k + o[2]));
    return out;
}

/// Zero window-shaped volume carrying `core` at the core position.
inline ProbVolume embed_core(const ProbVolume& core, const PatchDescriptor& d)
{
    const auto o = core_offset(d);
    ProbVolume out(d.window_dims(), core.spacing, core.num_labels, 0.0);
    for (int l = 0; l < core.num_labels; ++l)
        for (std::size_t k = 0; k < d.core_size[2]; ++k)
            for (std::size_t j = 0; j < d.core_size[1]; ++j)
                for (std::size_t i = 0; i < d.core_size[0]; ++i)
                    out.at(l, out.dims.index(i + o[0], j + o[1], k + o[2])) = core.at(l, core.dims.index(i, j, k));
    return out;
}

inline Tensor4 window_input(const Grid<double>& normalized, const PatchDescriptor& d, int in_channels)
{
    auto w = extract_window(normalized, d);
    Tensor4 t(static_cast<std::size_t>(in_channels), w.dims);
    std::copy(w.data.begin(), w.data.end(), t.data.begin());
    if (in_channels == 1) return t;
    const Dims& wd = w.dims;
    for (int a = 0; a < 3 && a + 1 < in_channels; ++a) {
        const double half = static_cast<double>(d.volume[a]) / 2.0;
        double* ch = t.channel(static_cast<std::size_t>(a + 1));
        for (std::size_t k = 0; k < wd.z; ++k)
            for (std::size_t j = 0; j < wd.y; ++j)
                for (std::size_t i = 0; i < wd.x; ++i) {
                    const std::size_t local[3] = {i, j, k};
                    const double g = static_cast<double>(d.window_origin[a] + static_cast<long>(local[a])) + 0.5;
                    ch[wd.index(i, j, k)] = (g - half) / half;
                }
    }
    return t;
}

inline Grid<double> normalized_image(const ScalarVolume& image)
{
    Grid<double> g(image.dims, image.spacing);
    for (std::size_t i = 0; i < image.size(); ++i) g[i] = normalize_intensity(image[i]);
    return g;
}

/// Fisher-Yates with counter-based draws; independent of the standard library's
/// shuffle implementation.
inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch)
{
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng rng(seed, 1000 + epoch);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

} // namespace detail

inline std::vector<TrainingPatch> make_training_patches(const std::vector<TrainingCase>& cases, const PatchLayout& layout,
                                                        bool weighted, const WeightParams& wp = {}, int in_channels = 1)
{
    std::vector<TrainingPatch> patches;
    for (const auto& c : cases) {
        if (!(c.image.dims == c.ref.dims) || !(c.image.dims == c.lung.dims))
            throw ShapeError("training case: image, ref and lung dims differ");
        const WeightVolume w = weighted ? build_weight_map(c.ref, c.lung, wp) : unit_weights(c.ref.dims, c.ref.spacing);
        const Grid<double> norm = detail::normalized_image(c.image);
        for (const auto& d : tile(c.image.dims, layout)) {
            TrainingPatch p;
            p.desc = d;
            p.input = detail::window_input(norm, d, in_channels);
            LabelVolume ref_win = extract_window(c.ref, d);
            p.ref.num_labels = c.ref.num_labels;
            static_cast<Grid<std::uint8_t>&>(p.ref) = crop_core(static_cast<const Grid<std::uint8_t>&>(ref_win), d);
            p.weight = crop_core(extract_window(w, d), d);
            patches.push_back(std::move(p));
        }
    }
    return patches;
}

/// Loss of one patch and its parameter gradient.
struct PatchStep {
    double loss = 0.0;
    NetParams grad;
};

inline PatchStep patch_step(const NetParams& params, const TrainingPatch& patch)
{
    ForwardCache cache;
    const ProbVolume prob = forward(params, patch.input, cache, patch.ref.spacing);
    const ProbVolume core = detail::crop_core(prob, patch.desc);
    LossWithGrad lg = weighted_dice_loss_and_grad(core, patch.ref, patch.weight);
    Gradients g = backward(params, cache, detail::embed_core(lg.grad, patch.desc));
    return {lg.report.total, std::move(g.params)};
}

using TrainProgress = std::function<void(int iteration, double loss)>;

/// Plain SGD over mini-batches drawn from a seeded per-epoch shuffle of all
/// patches. Batch gradients are summed in patch order.
inline TrainResult train(const std::vector<TrainingCase>& cases, const NetConfig& net, const TrainConfig& cfg,
                         bool weighted, const TrainProgress& progress = {})
{
    cfg.validate();
    if (cases.empty()) throw ShapeError("train: need at least one case");
    for (const auto& c : cases)
        if (c.ref.num_labels != net.num_labels) throw ShapeError("train: case label count differs from net config");
    const auto patches = make_training_patches(cases, cfg.layout, weighted, cfg.weights, net.in_channels);

    TrainResult result;
    result.params = init_params(net);
    result.loss_history.reserve(static_cast<std::size_t>(cfg.iterations));
    std::uint64_t epoch = 0;
    auto order = detail::seeded_permutation(patches.size(), cfg.seed, epoch);
    std::size_t cursor = 0;
    for (int it = 0; it < cfg.iterations; ++it) {
        NetParams grad = result.params.zeros_like();
        double loss = 0.0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            if (cursor == order.size()) {
                order = detail::seeded_permutation(patches.size(), cfg.seed, ++epoch);
                cursor = 0;
            }
            PatchStep step = patch_step(result.params, patches[order[cursor++]]);
            loss += step.loss;
            accumulate(grad, step.grad);
        }
        loss /= cfg.batch_size;
        if (!std::isfinite(loss)) throw NumericError("train: non-finite loss at iteration " + std::to_string(it));
        result.loss_history.push_back(loss);
        for (std::size_t t = 0; t < grad.tensors.size(); ++t) {
            auto& values = result.params.tensors[t].values;
            const auto& g = grad.tensors[t].values;
            for (std::size_t i = 0; i < values.size(); ++i) values[i] -= cfg.learning_rate * g[i];
        }
        if (progress) progress(it, loss);
    }
    return result;
}

inline TrainResult train(const std::vector<PhantomCase>& cases, const NetConfig& net, const TrainConfig& cfg,
                         bool weighted, const TrainProgress& progress = {})
{
    std::vector<TrainingCase> tc;
    tc.reserve(cases.size());
    for (const auto& c : cases) tc.push_back(to_training_case(c));
    return train(tc, net, cfg, weighted, progress);
}

/// Tile, run the net per padded window, stitch the cores.
inline ProbVolume infer(const NetParams& params, const ScalarVolume& image, const PatchLayout& layout = {})
{
    const Grid<double> norm = detail::normalized_image(image);
    std::vector<std::pair<PatchDescriptor, ProbVolume>> outputs;
    for (const auto& d : tile(image.dims, layout))
        outputs.emplace_back(d, forward(params, detail::window_input(norm, d, params.config.in_channels), image.spacing));
    return stitch(outputs);
}

} // namespace lobeseg
