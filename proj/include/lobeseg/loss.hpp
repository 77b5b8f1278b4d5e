#pragma once

// Weighted Dice loss and its analytic gradient.
//
// Per label l, with r the one-hot reference channel and p the prediction:
//   A_l = sum_i p_i r_i w_i,   B_l = sum_i p_i^2 w_i + sum_i r_i^2 w_i
//   L_l = 1 - 2 A_l / B_l      (0 when B_l == 0)
// The reported total is the mean of L_l over all labels, background included.
// Sums are accumulated in double in linear voxel order.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "lobeseg/error.hpp"
#include "lobeseg/volume.hpp"

namespace lobeseg {

struct LossReport {
    double total = 0.0;
    std::vector<double> per_label;
    std::size_t num_voxels = 0;
};

struct LossWithGrad {
    LossReport report;
    ProbVolume grad;
};

namespace detail {

inline void check_loss_inputs(const ProbVolume& pred, const LabelVolume& ref, const WeightVolume& w)
{
    if (!(pred.dims == ref.dims) || !(pred.dims == w.dims)) throw ShapeError("dice loss: dims mismatch");
    if (!(pred.spacing == ref.spacing) || !(pred.spacing == w.spacing)) throw ShapeError("dice loss: spacing mismatch");
    if (pred.num_labels != ref.num_labels) throw ShapeError("dice loss: label count mismatch");
    for (double v : pred.data)
        if (!std::isfinite(v)) throw NumericError("dice loss: non-finite prediction");
    for (float v : w.data)
        if (!std::isfinite(v)) throw NumericError("dice loss: non-finite weight");
}

struct LabelSums {
    double a = 0.0;
    double b = 0.0;
};

inline LabelSums label_sums(const ProbVolume& pred, const LabelVolume& ref, const WeightVolume& w, int l)
{
    LabelSums s;
    auto p = pred.channel(l);
    double pp = 0.0, rr = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double wi = w[i];
        const double ri = ref[i] == l ? 1.0 : 0.0;
        s.a += p[i] * ri * wi;
        pp += p[i] * p[i] * wi;
        rr += ri * ri * wi;
    }
    s.b = pp + rr;
    return s;
}

inline LossWithGrad evaluate(const ProbVolume& pred, const LabelVolume& ref, const WeightVolume& w, bool want_grad)
{
    check_loss_inputs(pred, ref, w);
    LossWithGrad out;
    const int labels = pred.num_labels;
    out.report.num_voxels = pred.voxels();
    out.report.per_label.assign(static_cast<std::size_t>(labels), 0.0);
    if (want_grad) out.grad = ProbVolume(pred.dims, pred.spacing, labels, 0.0);
    double sum = 0.0;
    for (int l = 0; l < labels; ++l) {
        const LabelSums s = label_sums(pred, ref, w, l);
        const double value = s.b == 0.0 ? 0.0 : 1.0 - 2.0 * s.a / s.b;
        out.report.per_label[static_cast<std::size_t>(l)] = value;
        sum += value;
        if (!want_grad || s.b == 0.0) continue;
        // dL_l/dp_i = (4 A p_i w_i - 2 r_i w_i B) / B^2, scaled by 1/L for the mean.
        const double scale = 1.0 / (static_cast<double>(labels) * s.b * s.b);
        auto p = pred.channel(l);
        auto g = out.grad.channel(l);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double wi = w[i];
            const double ri = ref[i] == l ? 1.0 : 0.0;
            g[i] = (4.0 * s.a * p[i] * wi - 2.0 * ri * wi * s.b) * scale;
        }
    }
    out.report.total = sum / static_cast<double>(labels);
    return out;
}

} // namespace detail

inline LossReport weighted_dice_loss(const ProbVolume& pred, const LabelVolume& ref, const WeightVolume& w)
{
    return detail::evaluate(pred, ref, w, false).report;
}

/// Gradient of the mean loss with respect to every prediction entry.
inline ProbVolume weighted_dice_grad(const ProbVolume& pred, const LabelVolume& ref, const WeightVolume& w)
{
    return detail::evaluate(pred, ref, w, true).grad;
}

inline LossWithGrad weighted_dice_loss_and_grad(const ProbVolume& pred, const LabelVolume& ref, const WeightVolume& w)
{
    return detail::evaluate(pred, ref, w, true);
}

inline WeightVolume unit_weights(const Dims& dims, const Spacing& spacing) { return WeightVolume(dims, spacing, 1.0f); }

/// Unweighted baseline: identical to the weighted loss with w == 1.
inline LossReport dice_loss(const ProbVolume& pred, const LabelVolume& ref)
{
    return weighted_dice_loss(pred, ref, unit_weights(pred.dims, pred.spacing));
}

inline ProbVolume dice_grad(const ProbVolume& pred, const LabelVolume& ref)
{
    return weighted_dice_grad(pred, ref, unit_weights(pred.dims, pred.spacing));
}

} // namespace lobeseg
