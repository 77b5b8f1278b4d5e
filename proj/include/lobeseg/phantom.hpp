#pragma once

// Synthetic lung phantoms with incomplete fissures.
//
// The lung is an axis-aligned ellipsoid with a two-voxel margin. Fissures are
// quadratic sheets z = c + a*u + b*v + q*u^2 + s*v^2 (u, v centred voxel
// coordinates) that split it into 2 (left) or 3 (right) lobes, numbered from
// the high-z side. Intensities are loosely HU-like and otherwise arbitrary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lobeseg/error.hpp"
#include "lobeseg/postprocess.hpp"
#include "lobeseg/random.hpp"
#include "lobeseg/volume.hpp"

namespace lobeseg {

struct PhantomSpec {
    Dims dims = Dims::cube(64);
    Spacing spacing = Spacing::isotropic(1.5);
    Side side = Side::left;
    double completeness = 0.6;
    double noise_sigma = 20.0;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (dims.x < 16 || dims.y < 16 || dims.z < 16)
            throw ShapeError("phantom dims must be >= 16 on every axis, got " + to_string(dims));
        if (!spacing.valid()) throw ShapeError("phantom spacing must be positive");
        if (!(completeness >= 0.0 && completeness <= 1.0)) throw ShapeError("completeness must lie in [0, 1]");
        if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ShapeError("noise_sigma must be >= 0");
    }
};

struct PhantomCase {
    ScalarVolume image;
    LabelVolume ref;
    Mask lung;
    Mask fissure_full;
    Mask fissure_visible;
};

inline constexpr float kBackgroundHu = -1000.0f;
inline constexpr float kLungHu = -850.0f;
inline constexpr float kFissureHu = -650.0f;

namespace detail {

enum : std::uint64_t { kStreamGeometry = 1, kStreamDiscs = 2, kStreamNoise = 3 };

struct Sheet {
    double c = 0, a = 0, b = 0, q = 0, s = 0;
    double operator()(double u, double v) const { return c + a * u + b * v + q * u * u + s * v * v; }
};

/// Reassigns every lobe fragment except the largest to the lobe it touches most.
inline void merge_lobe_fragments(LabelVolume& ref)
{
    for (int pass = 0; pass < 8; ++pass) {
        const Components comps = connected_components(ref);
        std::vector<std::int32_t> keep(static_cast<std::size_t>(ref.num_labels), 0);
        std::vector<std::size_t> best(static_cast<std::size_t>(ref.num_labels), 0);
        for (const auto& c : comps.table) {
            auto l = static_cast<std::size_t>(c.label);
            if (keep[l] == 0 || c.count > best[l]) {
                keep[l] = c.id;
                best[l] = c.count;
            }
        }
        bool changed = false;
        for (const auto& c : comps.table) {
            if (c.id == keep[static_cast<std::size_t>(c.label)]) continue;
            std::vector<std::size_t> members;
            std::vector<std::size_t> contacts(static_cast<std::size_t>(ref.num_labels), 0);
            for (std::size_t i = c.seed_index; i < ref.size(); ++i) {
                if (comps.ids[i] != c.id) continue;
                members.push_back(i);
                const auto [x, y, z] = ref.dims.coords(i);
                for_each_face_neighbour(ref.dims, x, y, z, [&](std::size_t n) {
                    if (ref[n] != 0 && comps.ids[n] != c.id) ++contacts[ref[n]];
                });
            }
            auto target = static_cast<std::uint8_t>(
                std::max_element(contacts.begin(), contacts.end()) - contacts.begin());
            if (target == 0) continue;
            for (auto i : members) ref[i] = target;
            changed = true;
        }
        if (!changed) return;
    }
}

} // namespace detail

inline PhantomCase generate(const PhantomSpec& spec)
{
    spec.validate();
    const Dims& d = spec.dims;
    const int labels = num_labels_for(spec.side);
    const double cx = (static_cast<double>(d.x) - 1) / 2, cy = (static_cast<double>(d.y) - 1) / 2,
                 cz = (static_cast<double>(d.z) - 1) / 2;
    const double rx = cx - 2, ry = cy - 2, rz = cz - 2;

    CounterRng geo(spec.seed, detail::kStreamGeometry);
    auto draw_sheet = [&](double centre) {
        detail::Sheet s;
        s.c = centre;
        s.a = geo.uniform(-0.12, 0.12);
        s.b = geo.uniform(-0.12, 0.12);
        s.q = geo.uniform(-0.08, 0.08) / rx;
        s.s = geo.uniform(-0.08, 0.08) / ry;
        return s;
    };
    std::vector<detail::Sheet> sheets;
    if (spec.side == Side::left) {
        sheets.push_back(draw_sheet(cz + geo.uniform(-0.1, 0.1) * rz));
    } else {
        sheets.push_back(draw_sheet(cz + (0.33 + geo.uniform(-0.08, 0.08)) * rz));
        sheets.push_back(draw_sheet(cz + (-0.33 + geo.uniform(-0.08, 0.08)) * rz));
    }

    PhantomCase out;
    out.lung = Mask(d, spec.spacing, 0);
    out.ref = LabelVolume(d, spec.spacing, labels);
    for (std::size_t z = 0; z < d.z; ++z)
        for (std::size_t y = 0; y < d.y; ++y)
            for (std::size_t x = 0; x < d.x; ++x) {
                const double u = static_cast<double>(x) - cx, v = static_cast<double>(y) - cy,
                             w = static_cast<double>(z) - cz;
                if ((u / rx) * (u / rx) + (v / ry) * (v / ry) + (w / rz) * (w / rz) > 1.0) continue;
                const std::size_t i = d.index(x, y, z);
                out.lung[i] = 1;
                const double zf = static_cast<double>(z);
                const double h1 = sheets[0](u, v);
                int label = labels - 1;
                if (zf > h1) {
                    label = 1;
                } else if (sheets.size() == 2) {
                    // Keep the lower sheet at least 3 voxels below the upper one.
                    const double h2 = std::min(sheets[1](u, v), h1 - 3.0);
                    label = zf > h2 ? 2 : 3;
                }
                out.ref[i] = static_cast<std::uint8_t>(label);
            }
    detail::merge_lobe_fragments(out.ref);
    for (int l = 1; l < labels; ++l)
        if (count_nonzero(label_mask(out.ref, l)) == 0)
            throw NumericError("phantom: lobe " + std::to_string(l) + " ended up empty");

    // Fissure sheet: lobe voxels touching the next lobe down.
    out.fissure_full = Mask(d, spec.spacing, 0);
    std::vector<std::size_t> visible;
    for (std::size_t z = 0; z < d.z; ++z)
        for (std::size_t y = 0; y < d.y; ++y)
            for (std::size_t x = 0; x < d.x; ++x) {
                const std::size_t i = d.index(x, y, z);
                const auto own = out.ref[i];
                if (own == 0) continue;
                bool hit = false;
                for_each_face_neighbour(d, x, y, z, [&](std::size_t n) { hit = hit || out.ref[n] > own; });
                if (hit) {
                    out.fissure_full[i] = 1;
                    visible.push_back(i);
                }
            }

    // Punch disc-shaped gaps until the visible share is within [phi - 5%, phi].
    const double total = static_cast<double>(visible.size());
    const double upper = spec.completeness * total;
    const double lower = upper - 0.05 * total;
    const double base_radius = std::max(2.0, 0.3 * std::min(rx, ry));
    CounterRng discs(spec.seed, detail::kStreamDiscs);
    while (static_cast<double>(visible.size()) > upper) {
        const std::size_t centre = visible[discs.below(visible.size())];
        const auto cc = d.coords(centre);
        double radius = base_radius;
        for (;;) {
            const double r2 = radius * radius;
            auto inside = [&](std::size_t i) {
                const auto p = d.coords(i);
                double acc = 0;
                for (int a = 0; a < 3; ++a) {
                    const double diff = static_cast<double>(p[a]) - static_cast<double>(cc[a]);
                    acc += diff * diff;
                }
                return acc <= r2;
            };
            const auto hits = static_cast<double>(std::count_if(visible.begin(), visible.end(), inside));
            if (static_cast<double>(visible.size()) - hits >= lower) {
                std::erase_if(visible, inside);
                break;
            }
            radius *= 0.7;
            if (radius < 1.0) {
                std::erase(visible, centre);
                break;
            }
        }
    }
    out.fissure_visible = Mask(d, spec.spacing, 0);
    for (auto i : visible) out.fissure_visible[i] = 1;

    out.image = ScalarVolume(d, spec.spacing, kBackgroundHu);
    for (std::size_t i = 0; i < out.image.size(); ++i) {
        double v = out.fissure_visible[i] ? kFissureHu : (out.lung[i] ? kLungHu : kBackgroundHu);
        if (spec.noise_sigma > 0) v += spec.noise_sigma * counter_normal(spec.seed, detail::kStreamNoise, i);
        out.image[i] = static_cast<float>(v);
    }
    return out;
}

} // namespace lobeseg
