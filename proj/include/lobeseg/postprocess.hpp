#pragma once

// Inference cleanup chain:
//   argmax -> lung clipping -> 6-connected components -> keep largest per lobe
//   -> Voronoi fill of remaining lung holes.

#include <cstdint>
#include <string>
#include <vector>

#include "lobeseg/edt.hpp"
#include "lobeseg/error.hpp"
#include "lobeseg/volume.hpp"

namespace lobeseg {

struct ComponentInfo {
    std::int32_t id = 0; // 1-based
    int label = 0;
    std::size_t count = 0;
    std::size_t seed_index = 0; // lowest linear index in the component
};

using ComponentTable = std::vector<ComponentInfo>;

struct Components {
    ComponentTable table;
    Grid<std::int32_t> ids; // 0 on background
};

/// 6-connected components of each non-background label. Ids ascend with the
/// component's lowest linear index.
inline Components connected_components(const LabelVolume& seg)
{
    const Dims& d = seg.dims;
    Components out;
    out.ids = Grid<std::int32_t>(d, seg.spacing, 0);
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < seg.size(); ++start) {
        const auto label = seg[start];
        if (label == 0 || out.ids[start] != 0) continue;
        ComponentInfo info;
        info.id = static_cast<std::int32_t>(out.table.size() + 1);
        info.label = label;
        info.seed_index = start;
        out.ids[start] = info.id;
        stack.assign(1, start);
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            ++info.count;
            const auto [x, y, z] = d.coords(i);
            for_each_face_neighbour(d, x, y, z, [&](std::size_t n) {
                if (seg[n] == label && out.ids[n] == 0) {
                    out.ids[n] = info.id;
                    stack.push_back(n);
                }
            });
        }
        out.table.push_back(info);
    }
    return out;
}

struct CleanupResult {
    LabelVolume seg;
    std::vector<std::string> warnings;
};

/// Keeps the single largest component of each lobe label (ties: smaller seed
/// index); all other components become background.
inline CleanupResult keep_largest(const LabelVolume& seg, const Components& comps)
{
    if (!(comps.ids.dims == seg.dims)) throw ShapeError("keep_largest: component volume does not match seg");
    std::vector<std::int32_t> keep(static_cast<std::size_t>(seg.num_labels), 0);
    std::vector<std::size_t> best(static_cast<std::size_t>(seg.num_labels), 0);
    for (const auto& c : comps.table) {
        auto l = static_cast<std::size_t>(c.label);
        // Table is in seed-index order, so strict '>' keeps the earlier one on ties.
        if (keep[l] == 0 || c.count > best[l]) {
            keep[l] = c.id;
            best[l] = c.count;
        }
    }
    CleanupResult r;
    r.seg = seg;
    for (std::size_t i = 0; i < seg.size(); ++i) {
        if (seg[i] == 0) continue;
        if (comps.ids[i] != keep[seg[i]]) r.seg[i] = 0;
    }
    for (int l = 1; l < seg.num_labels; ++l)
        if (keep[static_cast<std::size_t>(l)] == 0) r.warnings.push_back("lobe label " + std::to_string(l) + " absent");
    return r;
}

inline LabelVolume apply_lung_mask(const LabelVolume& seg, const Mask& lung)
{
    if (!(seg.dims == lung.dims)) throw ShapeError("apply_lung_mask: dims mismatch");
    LabelVolume out = seg;
    for (std::size_t i = 0; i < seg.size(); ++i)
        if (!lung[i]) out[i] = 0;
    return out;
}

/// Background lung voxels take the label of their nearest labelled voxel
/// (physical distance; ties to the smaller linear index).
inline LabelVolume voronoi_fill(const LabelVolume& seg, const Mask& lung)
{
    if (!(seg.dims == lung.dims)) throw ShapeError("voronoi_fill: dims mismatch");
    Mask seeds(seg.dims, seg.spacing, 0);
    bool any_inside = false;
    for (std::size_t i = 0; i < seg.size(); ++i) {
        seeds[i] = seg[i] != 0;
        any_inside = any_inside || (seeds[i] && lung[i]);
    }
    if (!any_inside) throw NumericError("voronoi_fill: no labelled voxels inside the lung");
    const FeatureVolume nearest = feature_transform(seeds);
    LabelVolume out = seg;
    for (std::size_t i = 0; i < seg.size(); ++i)
        if (lung[i] && seg[i] == 0) out[i] = seg[static_cast<std::size_t>(nearest[i])];
    return out;
}

/// Full chain from per-label probabilities to a lobe segmentation that covers
/// the lung exactly.
inline CleanupResult postprocess(const ProbVolume& prob, const Mask& lung, Side side)
{
    if (prob.num_labels != num_labels_for(side))
        throw ShapeError(std::string("postprocess: ") + to_string(side) + " lung needs " +
                         std::to_string(num_labels_for(side)) + " labels, got " + std::to_string(prob.num_labels));
    if (!(prob.dims == lung.dims)) throw ShapeError("postprocess: prob and lung dims differ");
    LabelVolume seg = apply_lung_mask(argmax(prob), lung);
    CleanupResult r = keep_largest(seg, connected_components(seg));
    r.seg = voronoi_fill(r.seg, lung);
    return r;
}

/// Lung voxels == labelled voxels.
inline bool covers_lung_exactly(const LabelVolume& seg, const Mask& lung)
{
    for (std::size_t i = 0; i < seg.size(); ++i)
        if ((seg[i] != 0) != (lung[i] != 0)) return false;
    return true;
}

} // namespace lobeseg
