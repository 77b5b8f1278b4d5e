#pragma once

// Isotropic resampling and core+margin patch tiling.
//
// Voxel centres sit at (i + 0.5) * spacing. Resampling maps each output centre
// into input index space and clamps samples that fall outside to the edge voxel.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "lobeseg/error.hpp"
#include "lobeseg/volume.hpp"

namespace lobeseg {

template <class V>
struct Resampled {
    V volume;
    std::vector<std::string> warnings;
};

namespace detail {

struct AxisSample {
    std::size_t lo = 0;
    std::size_t hi = 0;
    double frac = 0.0; // weight of hi
    std::size_t nearest = 0;
};

inline std::vector<AxisSample> axis_samples(std::size_t n_in, double s_in, std::size_t n_out, double s_out)
{
    std::vector<AxisSample> out(n_out);
    const double last = static_cast<double>(n_in - 1);
    for (std::size_t j = 0; j < n_out; ++j) {
        double u = (static_cast<double>(j) + 0.5) * s_out / s_in - 0.5;
        u = std::clamp(u, 0.0, last);
        const double f = std::floor(u);
        AxisSample a;
        a.lo = static_cast<std::size_t>(f);
        a.hi = std::min(a.lo + 1, n_in - 1);
        a.frac = u - f;
        a.nearest = std::min(static_cast<std::size_t>(std::floor(u + 0.5)), n_in - 1);
        out[j] = a;
    }
    return out;
}

inline std::size_t resampled_extent(std::size_t n, double s, double t, int axis, std::vector<std::string>& warnings)
{
    const double r = std::floor(static_cast<double>(n) * s / t + 0.5);
    if (r < 1.0) {
        warnings.push_back("axis " + std::to_string(axis) + " rounds to 0 voxels; clamped to 1");
        return 1;
    }
    return static_cast<std::size_t>(r);
}

inline Dims resampled_dims(const Dims& d, const Spacing& s, const Spacing& t, std::vector<std::string>& warnings)
{
    return {resampled_extent(d.x, s.x, t.x, 0, warnings), resampled_extent(d.y, s.y, t.y, 1, warnings),
            resampled_extent(d.z, s.z, t.z, 2, warnings)};
}

} // namespace detail

/// Trilinear resampling onto an explicit output grid.
inline ScalarVolume resample_scalar_to(const ScalarVolume& vol, Dims out_dims, Spacing out_spacing)
{
    ScalarVolume out(out_dims, out_spacing);
    auto ax = detail::axis_samples(vol.dims.x, vol.spacing.x, out_dims.x, out_spacing.x);
    auto ay = detail::axis_samples(vol.dims.y, vol.spacing.y, out_dims.y, out_spacing.y);
    auto az = detail::axis_samples(vol.dims.z, vol.spacing.z, out_dims.z, out_spacing.z);
    for (std::size_t k = 0; k < out_dims.z; ++k) {
        const auto& sz = az[k];
        for (std::size_t j = 0; j < out_dims.y; ++j) {
            const auto& sy = ay[j];
            for (std::size_t i = 0; i < out_dims.x; ++i) {
                const auto& sx = ax[i];
                auto v = [&](std::size_t x, std::size_t y, std::size_t z) {
                    return static_cast<double>(vol.at(x, y, z));
                };
                const double c00 = v(sx.lo, sy.lo, sz.lo) * (1 - sx.frac) + v(sx.hi, sy.lo, sz.lo) * sx.frac;
                const double c10 = v(sx.lo, sy.hi, sz.lo) * (1 - sx.frac) + v(sx.hi, sy.hi, sz.lo) * sx.frac;
                const double c01 = v(sx.lo, sy.lo, sz.hi) * (1 - sx.frac) + v(sx.hi, sy.lo, sz.hi) * sx.frac;
                const double c11 = v(sx.lo, sy.hi, sz.hi) * (1 - sx.frac) + v(sx.hi, sy.hi, sz.hi) * sx.frac;
                const double c0 = c00 * (1 - sy.frac) + c10 * sy.frac;
                const double c1 = c01 * (1 - sy.frac) + c11 * sy.frac;
                out.at(i, j, k) = static_cast<float>(c0 * (1 - sz.frac) + c1 * sz.frac);
            }
        }
    }
    return out;
}

/// Nearest-neighbour resampling onto an explicit output grid.
inline LabelVolume resample_labels_to(const LabelVolume& vol, Dims out_dims, Spacing out_spacing)
{
    LabelVolume out(out_dims, out_spacing, vol.num_labels);
    auto ax = detail::axis_samples(vol.dims.x, vol.spacing.x, out_dims.x, out_spacing.x);
    auto ay = detail::axis_samples(vol.dims.y, vol.spacing.y, out_dims.y, out_spacing.y);
    auto az = detail::axis_samples(vol.dims.z, vol.spacing.z, out_dims.z, out_spacing.z);
    for (std::size_t k = 0; k < out_dims.z; ++k)
        for (std::size_t j = 0; j < out_dims.y; ++j)
            for (std::size_t i = 0; i < out_dims.x; ++i)
                out.at(i, j, k) = vol.at(ax[i].nearest, ay[j].nearest, az[k].nearest);
    return out;
}

/// Output dims are round-half-up(extent / target) per axis, clamped to >= 1.
inline Resampled<ScalarVolume> resample_scalar(const ScalarVolume& vol, Spacing target)
{
    if (!target.valid()) throw ShapeError("resample target spacing must be positive");
    Resampled<ScalarVolume> r;
    Dims d = detail::resampled_dims(vol.dims, vol.spacing, target, r.warnings);
    r.volume = resample_scalar_to(vol, d, target);
    return r;
}

inline Resampled<LabelVolume> resample_labels(const LabelVolume& vol, Spacing target)
{
    if (!target.valid()) throw ShapeError("resample target spacing must be positive");
    Resampled<LabelVolume> r;
    Dims d = detail::resampled_dims(vol.dims, vol.spacing, target, r.warnings);
    r.volume = resample_labels_to(vol, d, target);
    return r;
}

/// Trilinear per channel; channel sums are preserved because the weights are shared.
inline ProbVolume resample_prob_to(const ProbVolume& prob, Dims out_dims, Spacing out_spacing)
{
    ProbVolume out(out_dims, out_spacing, prob.num_labels);
    for (int l = 0; l < prob.num_labels; ++l) {
        ScalarVolume ch(prob.dims, prob.spacing);
        // Channels travel through double-precision math; float storage here is the
        // only rounding step.
        auto src = prob.channel(l);
        for (std::size_t i = 0; i < src.size(); ++i) ch[i] = static_cast<float>(src[i]);
        auto r = resample_scalar_to(ch, out_dims, out_spacing);
        auto dst = out.channel(l);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = r[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Patch tiling

struct PatchLayout {
    std::size_t core = 32;
    std::size_t margin = 8;

    std::size_t window() const { return core + 2 * margin; }
    bool valid() const { return core >= 1; }
};

struct PatchDescriptor {
    Dims volume;
    std::array<std::size_t, 3> core_origin{};
    std::array<std::size_t, 3> core_size{};
    std::array<long, 3> window_origin{};
    std::array<std::size_t, 3> window_size{};
    std::array<bool, 3> mirror_low{};  // window extends below index 0
    std::array<bool, 3> mirror_high{}; // window extends past the last voxel

    Dims window_dims() const { return {window_size[0], window_size[1], window_size[2]}; }
    bool mirrored() const
    {
        for (int a = 0; a < 3; ++a)
            if (mirror_low[a] || mirror_high[a]) return true;
        return false;
    }
};

namespace detail {

struct AxisTile {
    std::size_t core_origin;
    std::size_t core_size;
    long window_origin;
    std::size_t window_size;
};

inline std::vector<AxisTile> tile_axis(std::size_t n, const PatchLayout& layout)
{
    std::vector<AxisTile> out;
    const std::size_t window = layout.window();
    if (layout.core > n) {
        // Single core covering the whole axis, window centred on it.
        const long origin = -static_cast<long>((window - n) / 2);
        out.push_back({0, n, origin, window});
        return out;
    }
    const std::size_t count = (n + layout.core - 1) / layout.core;
    for (std::size_t c = 0; c < count; ++c) {
        std::size_t start = c + 1 == count ? n - layout.core : c * layout.core;
        out.push_back({start, layout.core, static_cast<long>(start) - static_cast<long>(layout.margin), window});
    }
    return out;
}

/// Reflect without repeating the edge voxel: -1 -> 1, n -> n - 2.
inline std::size_t mirror_index(long i, std::size_t n)
{
    if (n == 1) return 0;
    const long period = 2 * (static_cast<long>(n) - 1);
    long m = i % period;
    if (m < 0) m += period;
    if (m >= static_cast<long>(n)) m = period - m;
    return static_cast<std::size_t>(m);
}

} // namespace detail

/// Cores partition the volume; the last core per axis shifts inward to fit.
/// Patches are ordered x fastest, then y, then z.
inline std::vector<PatchDescriptor> tile(const Dims& dims, const PatchLayout& layout)
{
    if (!layout.valid()) throw ShapeError("patch core must be >= 1");
    if (!dims.valid()) throw ShapeError("tile: dims must be >= 1");
    auto tx = detail::tile_axis(dims.x, layout);
    auto ty = detail::tile_axis(dims.y, layout);
    auto tz = detail::tile_axis(dims.z, layout);
    std::vector<PatchDescriptor> out;
    out.reserve(tx.size() * ty.size() * tz.size());
    for (const auto& az : tz)
        for (const auto& ay : ty)
            for (const auto& ax : tx) {
                PatchDescriptor d;
                d.volume = dims;
                const detail::AxisTile* t[3] = {&ax, &ay, &az};
                for (int a = 0; a < 3; ++a) {
                    d.core_origin[a] = t[a]->core_origin;
                    d.core_size[a] = t[a]->core_size;
                    d.window_origin[a] = t[a]->window_origin;
                    d.window_size[a] = t[a]->window_size;
                    d.mirror_low[a] = t[a]->window_origin < 0;
                    d.mirror_high[a] =
                        t[a]->window_origin + static_cast<long>(t[a]->window_size) > static_cast<long>(dims[a]);
                }
                out.push_back(d);
            }
    return out;
}

/// Copies the padded window of `desc` out of `vol`, mirror-padding at faces.
template <class T>
Grid<T> extract_window(const Grid<T>& vol, const PatchDescriptor& desc)
{
    if (!(vol.dims == desc.volume)) throw ShapeError("extract_window: descriptor built for other dims");
    Grid<T> out(desc.window_dims(), vol.spacing);
    std::vector<std::size_t> mx(desc.window_size[0]);
    for (std::size_t i = 0; i < mx.size(); ++i)
        mx[i] = detail::mirror_index(desc.window_origin[0] + static_cast<long>(i), vol.dims.x);
    for (std::size_t k = 0; k < desc.window_size[2]; ++k) {
        const std::size_t z = detail::mirror_index(desc.window_origin[2] + static_cast<long>(k), vol.dims.z);
        for (std::size_t j = 0; j < desc.window_size[1]; ++j) {
            const std::size_t y = detail::mirror_index(desc.window_origin[1] + static_cast<long>(j), vol.dims.y);
            T* dst = &out.at(0, j, k);
            const T* src = &vol.at(0, y, z);
            for (std::size_t i = 0; i < mx.size(); ++i) dst[i] = src[mx[i]];
        }
    }
    return out;
}

inline LabelVolume extract_window(const LabelVolume& vol, const PatchDescriptor& desc)
{
    LabelVolume out;
    static_cast<Grid<std::uint8_t>&>(out) = extract_window(static_cast<const Grid<std::uint8_t>&>(vol), desc);
    out.num_labels = vol.num_labels;
    return out;
}

inline ProbVolume extract_window(const ProbVolume& prob, const PatchDescriptor& desc)
{
    ProbVolume out(desc.window_dims(), prob.spacing, prob.num_labels);
    for (int l = 0; l < prob.num_labels; ++l) {
        Grid<double> ch(prob.dims, prob.spacing);
        auto src = prob.channel(l);
        std::copy(src.begin(), src.end(), ch.data.begin());
        auto w = extract_window(ch, desc);
        std::copy(w.data.begin(), w.data.end(), out.channel(l).begin());
    }
    return out;
}

/// Offset of the core inside the padded window, per axis.
inline std::array<std::size_t, 3> core_offset(const PatchDescriptor& d)
{
    std::array<std::size_t, 3> o{};
    for (int a = 0; a < 3; ++a)
        o[a] = static_cast<std::size_t>(static_cast<long>(d.core_origin[a]) - d.window_origin[a]);
    return o;
}

/// Crops the core region out of a window-shaped grid.
template <class T>
Grid<T> crop_core(const Grid<T>& window, const PatchDescriptor& d)
{
    const auto o = core_offset(d);
    Grid<T> out(Dims{d.core_size[0], d.core_size[1], d.core_size[2]}, window.spacing);
    for (std::size_t k = 0; k < d.core_size[2]; ++k)
        for (std::size_t j = 0; j < d.core_size[1]; ++j)
            for (std::size_t i = 0; i < d.core_size[0]; ++i)
                out.at(i, j, k) = window.at(i + o[0], j + o[1], k + o[2]);
    return out;
}

/// Reassembles a full-volume ProbVolume from per-window predictions. Each
/// voxel takes the value from the patch whose core holds it; later patches win.
inline ProbVolume stitch(const std::vector<std::pair<PatchDescriptor, ProbVolume>>& patches)
{
    if (patches.empty()) throw ShapeError("stitch: no patches");
    const Dims dims = patches.front().first.volume;
    const int labels = patches.front().second.num_labels;
    ProbVolume out(dims, patches.front().second.spacing, labels);
    std::vector<std::uint8_t> covered(dims.count(), 0);
    for (const auto& [d, p] : patches) {
        if (!(d.volume == dims)) throw ShapeError("stitch: descriptors from different tile calls");
        if (!(p.dims == d.window_dims()) || p.num_labels != labels)
            throw ShapeError("stitch: patch shape does not match its window");
        const auto o = core_offset(d);
        for (std::size_t k = 0; k < d.core_size[2]; ++k)
            for (std::size_t j = 0; j < d.core_size[1]; ++j)
                for (std::size_t i = 0; i < d.core_size[0]; ++i) {
                    const std::size_t dst =
                        dims.index(d.core_origin[0] + i, d.core_origin[1] + j, d.core_origin[2] + k);
                    const std::size_t src = p.dims.index(i + o[0], j + o[1], k + o[2]);
                    for (int l = 0; l < labels; ++l) out.at(l, dst) = p.at(l, src);
                    covered[dst] = 1;
                }
    }
    for (std::size_t i = 0; i < covered.size(); ++i)
        if (!covered[i]) throw ShapeError("stitch: voxel " + std::to_string(i) + " not covered by any core");
    return out;
}

} // namespace lobeseg
