#pragma once

// Boundary-emphasising loss weights. Inside the lung, voxels closer than
// radius_mm to an inter-lobe boundary get max(w_max - d, w_far), everything else
// gets w_far. d is the physical distance (mm) to the nearest boundary voxel.

#include <algorithm>
#include <cmath>
#include <string>

#include "lobeseg/edt.hpp"
#include "lobeseg/error.hpp"
#include "lobeseg/volume.hpp"

namespace lobeseg {

struct WeightParams {
    double w_max = 10.0;
    double radius_mm = 10.0;
    double w_far = 1.0;

    bool valid() const { return w_max >= w_far && w_far > 0 && radius_mm > 0; }
};

/// Lobe voxels with a 6-neighbour holding a different lobe label. Lung/background
/// contacts do not count.
inline Mask lobar_boundary(const LabelVolume& ref)
{
    const Dims& d = ref.dims;
    Mask out(d, ref.spacing, 0);
    for (std::size_t z = 0; z < d.z; ++z)
        for (std::size_t y = 0; y < d.y; ++y)
            for (std::size_t x = 0; x < d.x; ++x) {
                const std::size_t i = d.index(x, y, z);
                const auto own = ref[i];
                if (own == 0) continue;
                bool hit = false;
                for_each_face_neighbour(d, x, y, z, [&](std::size_t n) {
                    hit = hit || (ref[n] != 0 && ref[n] != own);
                });
                out[i] = hit ? 1 : 0;
            }
    return out;
}

/// Weight map for the boundary-weighted Dice loss. With the defaults
/// (10, 10 mm, 1) lung voxels get max(10 - d, 1). Voxels outside the lung get
/// w_far, as does everything when the reference has no inter-lobe boundary.
inline WeightVolume build_weight_map(const LabelVolume& ref, const Mask& lung, const WeightParams& params = {})
{
    if (!params.valid()) throw ShapeError("invalid weight parameters");
    if (!(ref.dims == lung.dims)) throw ShapeError("build_weight_map: ref and lung dims differ");
    for (std::size_t i = 0; i < ref.size(); ++i)
        if (ref[i] != 0 && !lung[i])
            throw ShapeError("build_weight_map: lobe label outside the lung mask at voxel " + std::to_string(i));

    WeightVolume w(ref.dims, ref.spacing, static_cast<float>(params.w_far));
    const Mask boundary = lobar_boundary(ref);
    if (count_nonzero(boundary) == 0) return w;

    const DistanceVolume dist = edt(boundary);
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (!lung[i] || dist[i] >= params.radius_mm) continue;
        w[i] = static_cast<float>(std::max(params.w_max - dist[i], params.w_far));
    }
    return w;
}

} // namespace lobeseg
