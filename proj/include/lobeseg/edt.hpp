#pragma once

// Exact Euclidean distance and feature (nearest-seed) transforms.
//
// Separable lower-envelope-of-parabolas method, one pass per axis, with the
// voxel spacing folded into each pass. Squared distances are carried through all
// passes; the square root is taken once at the end. Ties between equally near
// seeds resolve to the smallest linear index: each pass keeps the earlier
// parabola on ties, and passes run x, y, z so z carries the most significance.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "lobeseg/error.hpp"
#include "lobeseg/volume.hpp"

namespace lobeseg {

using FeatureVolume = Grid<std::int64_t>;

struct EdtResult {
    DistanceVolume distance;
    FeatureVolume feature;
};

namespace detail {

class EnvelopeWorkspace {
public:
    explicit EnvelopeWorkspace(std::size_t n) : v_(n), z_(n + 1), f_(n), d_(n), fi_(n), fo_(n) {}

    std::vector<double>& f() { return f_; }
    std::vector<double>& d() { return d_; }
    std::vector<std::int64_t>& feat_in() { return fi_; }
    std::vector<std::int64_t>& feat_out() { return fo_; }

    /// d[q] = min_p a2 (q - p)^2 + f[p], with the argmin's feature id.
    void run(std::size_t n, double a2, bool with_features)
    {
        constexpr double inf = std::numeric_limits<double>::infinity();
        long k = -1;
        for (std::size_t p = 0; p < n; ++p) {
            if (f_[p] == inf) continue;
            const double fp = f_[p] + a2 * static_cast<double>(p) * static_cast<double>(p);
            double s = -inf;
            while (k >= 0) {
                const double vk = static_cast<double>(v_[k]);
                s = (fp - (f_[v_[k]] + a2 * vk * vk)) / (2.0 * a2 * (static_cast<double>(p) - vk));
                if (s <= z_[k]) --k;
                else break;
            }
            if (k < 0) {
                k = 0;
                v_[0] = p;
                z_[0] = -inf;
                z_[1] = inf;
            } else {
                ++k;
                v_[k] = p;
                z_[k] = s;
                z_[k + 1] = inf;
            }
        }
        if (k < 0) {
            for (std::size_t q = 0; q < n; ++q) {
                d_[q] = inf;
                if (with_features) fo_[q] = -1;
            }
            return;
        }
        long j = 0;
        for (std::size_t q = 0; q < n; ++q) {
            const double qd = static_cast<double>(q);
            while (z_[j + 1] < qd) ++j;
            const double diff = qd - static_cast<double>(v_[j]);
            d_[q] = a2 * diff * diff + f_[v_[j]];
            if (with_features) fo_[q] = fi_[v_[j]];
        }
    }

private:
    std::vector<std::size_t> v_;
    std::vector<double> z_;
    std::vector<double> f_;
    std::vector<double> d_;
    std::vector<std::int64_t> fi_;
    std::vector<std::int64_t> fo_;
};

/// One pass along `axis`, in place. Strided axes are processed one xy-row
/// batch at a time to keep memory access sequential.
inline void edt_pass(std::vector<double>& sq, std::vector<std::int64_t>* feat, const Dims& d, int axis, double spacing)
{
    const double a2 = spacing * spacing;
    const std::size_t n = d[axis];
    const bool with_features = feat != nullptr;
    EnvelopeWorkspace ws(n);
    if (axis == 0) {
        for (std::size_t row = 0; row < d.y * d.z; ++row) {
            const std::size_t base = row * d.x;
            for (std::size_t i = 0; i < n; ++i) {
                ws.f()[i] = sq[base + i];
                if (with_features) ws.feat_in()[i] = (*feat)[base + i];
            }
            ws.run(n, a2, with_features);
            for (std::size_t i = 0; i < n; ++i) {
                sq[base + i] = ws.d()[i];
                if (with_features) (*feat)[base + i] = ws.feat_out()[i];
            }
        }
        return;
    }
    const std::size_t stride = axis == 1 ? d.x : d.x * d.y;
    const std::size_t outer = axis == 1 ? d.z : d.y;
    const std::size_t outer_stride = axis == 1 ? d.x * d.y : d.x;
    // Gather a slab of n lines (one per x), transposed so each line is contiguous.
    std::vector<double> slab(n * d.x);
    std::vector<std::int64_t> slab_feat(with_features ? n * d.x : 0);
    for (std::size_t o = 0; o < outer; ++o) {
        const std::size_t base = o * outer_stride;
        for (std::size_t t = 0; t < n; ++t) {
            const std::size_t src = base + t * stride;
            for (std::size_t x = 0; x < d.x; ++x) {
                slab[x * n + t] = sq[src + x];
                if (with_features) slab_feat[x * n + t] = (*feat)[src + x];
            }
        }
        for (std::size_t x = 0; x < d.x; ++x) {
            std::copy_n(slab.begin() + static_cast<long>(x * n), n, ws.f().begin());
            if (with_features) std::copy_n(slab_feat.begin() + static_cast<long>(x * n), n, ws.feat_in().begin());
            ws.run(n, a2, with_features);
            std::copy_n(ws.d().begin(), n, slab.begin() + static_cast<long>(x * n));
            if (with_features) std::copy_n(ws.feat_out().begin(), n, slab_feat.begin() + static_cast<long>(x * n));
        }
        for (std::size_t t = 0; t < n; ++t) {
            const std::size_t dst = base + t * stride;
            for (std::size_t x = 0; x < d.x; ++x) {
                sq[dst + x] = slab[x * n + t];
                if (with_features) (*feat)[dst + x] = slab_feat[x * n + t];
            }
        }
    }
}

inline void require_seed(const Mask& seeds, const char* who)
{
    for (auto v : seeds.data)
        if (v) return;
    throw NumericError(std::string(who) + ": empty seed mask");
}

inline void transform(const Mask& seeds, std::vector<double>& sq, std::vector<std::int64_t>* feat)
{
    const std::size_t n = seeds.size();
    sq.assign(n, std::numeric_limits<double>::infinity());
    if (feat) feat->assign(n, -1);
    for (std::size_t i = 0; i < n; ++i) {
        if (seeds[i]) {
            sq[i] = 0.0;
            if (feat) (*feat)[i] = static_cast<std::int64_t>(i);
        }
    }
    edt_pass(sq, feat, seeds.dims, 0, seeds.spacing.x);
    edt_pass(sq, feat, seeds.dims, 1, seeds.spacing.y);
    edt_pass(sq, feat, seeds.dims, 2, seeds.spacing.z);
}

} // namespace detail

/// Squared distance (mm^2) from every voxel centre to the nearest seed centre.
inline Grid<double> squared_edt(const Mask& seeds)
{
    detail::require_seed(seeds, "squared_edt");
    Grid<double> out;
    out.dims = seeds.dims;
    out.spacing = seeds.spacing;
    detail::transform(seeds, out.data, nullptr);
    return out;
}

inline DistanceVolume edt(const Mask& seeds)
{
    auto out = squared_edt(seeds);
    for (auto& v : out.data) v = std::sqrt(v);
    return out;
}

/// Linear index of the nearest seed per voxel; ties go to the smallest index.
inline FeatureVolume feature_transform(const Mask& seeds)
{
    detail::require_seed(seeds, "feature_transform");
    std::vector<double> sq;
    FeatureVolume feat;
    feat.dims = seeds.dims;
    feat.spacing = seeds.spacing;
    detail::transform(seeds, sq, &feat.data);
    return feat;
}

inline EdtResult edt_with_features(const Mask& seeds)
{
    detail::require_seed(seeds, "edt_with_features");
    EdtResult r;
    r.distance.dims = r.feature.dims = seeds.dims;
    r.distance.spacing = r.feature.spacing = seeds.spacing;
    detail::transform(seeds, r.distance.data, &r.feature.data);
    for (auto& v : r.distance.data) v = std::sqrt(v);
    return r;
}

} // namespace lobeseg
