#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "lobeseg/grid.hpp"
#include "test_util.hpp"

namespace lobeseg {
namespace {

TEST(Resample, ConstantStaysConstant)
{
    ScalarVolume v(Dims{7, 5, 9}, {0.8, 2.3, 1.1}, 42.5f);
    auto r = resample_scalar(v, Spacing::isotropic(1.5));
    for (float x : r.volume.data) EXPECT_FLOAT_EQ(x, 42.5f);
}

TEST(Resample, ThreeMillimetreToOneAndAHalf)
{
    ScalarVolume v(Dims::cube(8), Spacing::isotropic(3.0), 1.0f);
    auto r = resample_scalar(v, Spacing::isotropic(1.5));
    EXPECT_EQ(r.volume.dims, Dims::cube(16));
    EXPECT_EQ(r.volume.spacing, Spacing::isotropic(1.5));
    EXPECT_TRUE(r.warnings.empty());
}

TEST(Resample, LinearRampReproducedAtInteriorVoxels)
{
    // f(x) = x * sx at input voxel x; trilinear reproduces affine functions.
    const double sx = 2.0;
    ScalarVolume v(Dims{10, 3, 3}, {sx, 1.0, 1.0});
    for (std::size_t z = 0; z < 3; ++z)
        for (std::size_t y = 0; y < 3; ++y)
            for (std::size_t x = 0; x < 10; ++x) v.at(x, y, z) = static_cast<float>(x * sx);
    for (double t : {0.5, 0.7, 1.3}) {
        auto r = resample_scalar(v, {t, 1.0, 1.0}).volume;
        for (std::size_t i = 0; i < r.dims.x; ++i) {
            const double u = (i + 0.5) * t / sx - 0.5; // input index of the output centre
            if (u < 0 || u > 9) continue;
            EXPECT_NEAR(r.at(i, 1, 1), u * sx, 1e-5) << "t=" << t << " i=" << i;
        }
    }
}

TEST(Resample, SameSpacingIsIdentity)
{
    std::mt19937_64 rng(3);
    std::normal_distribution<float> g(0, 100);
    ScalarVolume v(Dims{6, 7, 5}, {1.2, 0.9, 2.0});
    for (auto& x : v.data) x = g(rng);
    auto r = resample_scalar(v, v.spacing).volume;
    ASSERT_EQ(r.dims, v.dims);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(r[i], v[i], 1e-6 * (1 + std::abs(v[i])));
    auto again = resample_scalar(v, v.spacing).volume;
    EXPECT_EQ(r, again); // deterministic
}

TEST(Resample, DegenerateAxisIsClampedWithWarning)
{
    ScalarVolume v(Dims{4, 4, 1}, {1, 1, 0.2}, 1.0f);
    auto r = resample_scalar(v, Spacing::isotropic(1.0));
    EXPECT_EQ(r.volume.dims.z, 1u);
    EXPECT_EQ(r.warnings.size(), 1u);
}

TEST(ResampleLabels, IdentitySpacing)
{
    std::mt19937_64 rng(4);
    auto v = test::random_labels(Dims{5, 6, 7}, 4, rng);
    EXPECT_EQ(resample_labels(v, v.spacing).volume, v);
}

TEST(ResampleLabels, SplitPlaneWithinOneVoxel)
{
    // Labels 1 | 2 split at x = 8 mm physical.
    LabelVolume v(Dims{8, 2, 2}, {2.0, 1.0, 1.0}, 3);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = v.dims.coords(i)[0] < 4 ? 1 : 2;
    auto r = resample_labels(v, {1.0, 1.0, 1.0}).volume;
    ASSERT_EQ(r.dims.x, 16u);
    std::size_t first_two = 16;
    for (std::size_t x = 0; x < 16; ++x)
        if (r.at(x, 0, 0) == 2) {
            first_two = x;
            break;
        }
    const double plane_mm = 8.0;
    const double boundary_mm = static_cast<double>(first_two) * 1.0; // lower face of first label-2 voxel
    EXPECT_LE(std::abs(boundary_mm - plane_mm), 1.0);
}

TEST(ResampleLabels, NeverInventsLabels)
{
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        LabelVolume v(Dims{6, 5, 4}, {1.7, 0.6, 2.2}, 5);
        for (auto& x : v.data) x = static_cast<std::uint8_t>(rng() % 2 ? 1 : 3);
        auto r = resample_labels(v, Spacing::isotropic(0.9)).volume;
        for (auto x : r.data) EXPECT_TRUE(x == 1 || x == 3);
    }
}

TEST(Tile, EightPatchesAt64)
{
    auto t = tile(Dims::cube(64), PatchLayout{32, 8});
    EXPECT_EQ(t.size(), 8u);
    for (const auto& d : t) EXPECT_EQ(d.window_dims(), Dims::cube(48));
}

TEST(Tile, PaperScaleSinglePatchIsFullyMirrored)
{
    auto t = tile(Dims::cube(60), PatchLayout{60, 44});
    ASSERT_EQ(t.size(), 1u);
    EXPECT_EQ(t[0].window_dims(), Dims::cube(148));
    for (int a = 0; a < 3; ++a) {
        EXPECT_TRUE(t[0].mirror_low[a]);
        EXPECT_TRUE(t[0].mirror_high[a]);
    }
}

TEST(Tile, LastCoreShiftedInward)
{
    auto t = tile(Dims::cube(50), PatchLayout{32, 0});
    ASSERT_EQ(t.size(), 8u);
    std::set<std::size_t> starts;
    for (const auto& d : t) starts.insert(d.core_origin[0]);
    EXPECT_EQ(starts, (std::set<std::size_t>{0, 18}));
    EXPECT_EQ(t.back().core_origin[0] + t.back().core_size[0], 50u);
}

TEST(Tile, CoreLargerThanVolumeIsCentred)
{
    auto t = tile(Dims{10, 40, 40}, PatchLayout{32, 4});
    ASSERT_EQ(t.size(), 4u);
    EXPECT_EQ(t[0].core_size[0], 10u);
    EXPECT_EQ(t[0].window_size[0], 40u);
    EXPECT_EQ(t[0].window_origin[0], -15);
}

TEST(Tile, MirrorPaddingReflectsWithoutRepeatingEdge)
{
    Grid<int> g(Dims{4, 1, 1}, {});
    for (int i = 0; i < 4; ++i) g[static_cast<std::size_t>(i)] = i;
    PatchDescriptor d = tile(g.dims, PatchLayout{4, 3})[0];
    auto w = extract_window(g, d);
    const std::vector<int> expected{3, 2, 1, 0, 1, 2, 3, 2, 1, 0};
    ASSERT_EQ(w.dims.x, expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(w.at(i, 0, 0), expected[i]) << i;
}

ProbVolume random_prob(Dims d, int labels, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0, 1);
    ProbVolume p(d, {}, labels);
    for (auto& x : p.data) x = u(rng);
    return p;
}

TEST(Stitch, RoundTripOverRandomLayouts)
{
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        Dims d{1 + rng() % 20, 1 + rng() % 20, 1 + rng() % 20};
        PatchLayout layout{1 + rng() % 9, rng() % 5};
        auto p = random_prob(d, 3, rng);
        std::vector<std::pair<PatchDescriptor, ProbVolume>> patches;
        for (const auto& desc : tile(d, layout)) patches.emplace_back(desc, extract_window(p, desc));
        EXPECT_EQ(stitch(patches), p) << to_string(d) << " core " << layout.core;
    }
}

TEST(Stitch, LaterPatchWinsInOverlap)
{
    const Dims d{6, 1, 1};
    auto t = tile(d, PatchLayout{4, 0}); // cores [0,4) and [2,6)
    ASSERT_EQ(t.size(), 2u);
    std::vector<std::pair<PatchDescriptor, ProbVolume>> patches;
    patches.emplace_back(t[0], ProbVolume(t[0].window_dims(), {}, 2, 0.25));
    patches.emplace_back(t[1], ProbVolume(t[1].window_dims(), {}, 2, 0.75));
    auto s = stitch(patches);
    EXPECT_EQ(s.at(0, 1), 0.25);
    EXPECT_EQ(s.at(0, 2), 0.75);
    EXPECT_EQ(s.at(0, 3), 0.75);
}

TEST(Stitch, SinglePatchIsIdentity)
{
    std::mt19937_64 rng(2);
    auto p = random_prob(Dims{5, 4, 3}, 4, rng);
    auto t = tile(p.dims, PatchLayout{8, 2});
    ASSERT_EQ(t.size(), 1u);
    EXPECT_EQ(stitch({{t[0], extract_window(p, t[0])}}), p);
}

TEST(Stitch, MissingCoverageThrows)
{
    auto t = tile(Dims{8, 1, 1}, PatchLayout{4, 0});
    EXPECT_THROW(stitch({{t[0], ProbVolume(t[0].window_dims(), {}, 2)}}), ShapeError);
}

} // namespace
} // namespace lobeseg
