#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lobeseg/error.hpp"

namespace lobeseg {

/// Voxel size in millimetres along x, y, z.
struct Spacing {
    double x = 1.0;
    double y = 1.0;
    double z = 1.0;

    static constexpr Spacing isotropic(double s) { return {s, s, s}; }

    double operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }

    bool valid() const
    {
        return std::isfinite(x) && std::isfinite(y) && std::isfinite(z) && x > 0 && y > 0 && z > 0;
    }

    friend bool operator==(const Spacing&, const Spacing&) = default;
};

/// Voxel counts along x, y, z. Linear layout is x-fastest.
struct Dims {
    std::size_t x = 1;
    std::size_t y = 1;
    std::size_t z = 1;

    static constexpr Dims cube(std::size_t n) { return {n, n, n}; }

    std::size_t operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
    std::size_t count() const { return x * y * z; }
    bool valid() const { return x >= 1 && y >= 1 && z >= 1; }

    std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return i + x * (j + y * k); }

    std::array<std::size_t, 3> coords(std::size_t linear) const
    {
        return {linear % x, (linear / x) % y, linear / (x * y)};
    }

    friend bool operator==(const Dims&, const Dims&) = default;
};

inline std::string to_string(const Dims& d)
{
    return std::to_string(d.x) + "x" + std::to_string(d.y) + "x" + std::to_string(d.z);
}

/// Dense 3D grid with physical spacing. Value type; copies are deep.
template <class T>
struct Grid {
    using value_type = T;

    Dims dims;
    Spacing spacing;
    std::vector<T> data;

    Grid() : data(1, T{}) {}
    Grid(Dims d, Spacing s, T fill = T{}) : dims(d), spacing(s), data(d.count(), fill)
    {
        if (!d.valid()) throw ShapeError("grid dims must be >= 1 on every axis");
        if (!s.valid()) throw ShapeError("grid spacing must be positive and finite");
    }

    std::size_t size() const { return data.size(); }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    T& at(std::size_t i, std::size_t j, std::size_t k) { return data[dims.index(i, j, k)]; }
    const T& at(std::size_t i, std::size_t j, std::size_t k) const { return data[dims.index(i, j, k)]; }

    bool same_shape(const auto& other) const { return dims == other.dims; }

    friend bool operator==(const Grid&, const Grid&) = default;
};

using ScalarVolume = Grid<float>;
using WeightVolume = Grid<float>;
using DistanceVolume = Grid<double>;
using Mask = Grid<std::uint8_t>;

/// Integer label grid; 0 is background, 1..num_labels-1 are lobes.
struct LabelVolume : Grid<std::uint8_t> {
    int num_labels = 2;

    LabelVolume() = default;
    LabelVolume(Dims d, Spacing s, int labels, std::uint8_t fill = 0)
        : Grid<std::uint8_t>(d, s, fill), num_labels(labels)
    {
        if (labels < 2 || labels > 256) throw ShapeError("num_labels must lie in [2, 256]");
    }

    /// Throws if any value is outside [0, num_labels).
    void validate() const
    {
        for (auto v : data)
            if (v >= num_labels)
                throw ShapeError("label value " + std::to_string(v) + " >= num_labels " +
                                 std::to_string(num_labels));
    }

    friend bool operator==(const LabelVolume&, const LabelVolume&) = default;
};

/// Per-label probabilities, channel-major: data[l * N + i].
struct ProbVolume {
    Dims dims;
    Spacing spacing;
    int num_labels = 2;
    std::vector<double> data;

    ProbVolume() = default;
    ProbVolume(Dims d, Spacing s, int labels, double fill = 0.0)
        : dims(d), spacing(s), num_labels(labels), data(d.count() * static_cast<std::size_t>(labels), fill)
    {
        if (labels < 2) throw ShapeError("ProbVolume needs at least two channels");
    }

    std::size_t voxels() const { return dims.count(); }

    std::span<double> channel(int l) { return {data.data() + static_cast<std::size_t>(l) * voxels(), voxels()}; }
    std::span<const double> channel(int l) const
    {
        return {data.data() + static_cast<std::size_t>(l) * voxels(), voxels()};
    }

    double& at(int l, std::size_t i) { return data[static_cast<std::size_t>(l) * voxels() + i]; }
    double at(int l, std::size_t i) const { return data[static_cast<std::size_t>(l) * voxels() + i]; }

    friend bool operator==(const ProbVolume&, const ProbVolume&) = default;
};

enum class Side { left, right };

inline int num_labels_for(Side side) { return side == Side::left ? 3 : 4; }
inline const char* to_string(Side side) { return side == Side::left ? "left" : "right"; }

inline Side side_from_labels(int num_labels)
{
    if (num_labels == 3) return Side::left;
    if (num_labels == 4) return Side::right;
    throw ShapeError("lung side requires 3 (left) or 4 (right) labels, got " + std::to_string(num_labels));
}

inline ProbVolume one_hot(const LabelVolume& ref)
{
    ProbVolume out(ref.dims, ref.spacing, ref.num_labels, 0.0);
    for (std::size_t i = 0; i < ref.size(); ++i) out.at(ref[i], i) = 1.0;
    return out;
}

/// Per-voxel argmax; ties go to the lower label.
inline LabelVolume argmax(const ProbVolume& prob)
{
    LabelVolume out(prob.dims, prob.spacing, prob.num_labels);
    const std::size_t n = prob.voxels();
    std::vector<double> best(prob.channel(0).begin(), prob.channel(0).end());
    for (int l = 1; l < prob.num_labels; ++l) {
        auto ch = prob.channel(l);
        for (std::size_t i = 0; i < n; ++i) {
            if (ch[i] > best[i]) {
                best[i] = ch[i];
                out[i] = static_cast<std::uint8_t>(l);
            }
        }
    }
    return out;
}

/// Binary mask of voxels carrying exactly `label`.
inline Mask label_mask(const LabelVolume& v, int label)
{
    Mask m(v.dims, v.spacing, 0);
    for (std::size_t i = 0; i < v.size(); ++i) m[i] = v[i] == label ? 1 : 0;
    return m;
}

inline std::size_t count_nonzero(const Mask& m)
{
    std::size_t n = 0;
    for (auto v : m.data) n += v != 0;
    return n;
}

/// Face-neighbour offsets in (dx, dy, dz).
inline constexpr std::array<std::array<int, 3>, 6> kFaceNeighbours{{
    {-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1},
}};

/// Calls fn(neighbour_linear_index) for each in-bounds 6-neighbour of voxel (x, y, z).
template <class Fn>
inline void for_each_face_neighbour(const Dims& d, std::size_t x, std::size_t y, std::size_t z, Fn&& fn)
{
    const std::size_t i = d.index(x, y, z);
    const std::size_t sy = d.x, sz = d.x * d.y;
    if (x > 0) fn(i - 1);
    if (x + 1 < d.x) fn(i + 1);
    if (y > 0) fn(i - sy);
    if (y + 1 < d.y) fn(i + sy);
    if (z > 0) fn(i - sz);
    if (z + 1 < d.z) fn(i + sz);
}

} // namespace lobeseg
