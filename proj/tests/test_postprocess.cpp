#include <gtest/gtest.h>

#include <queue>
#include <random>

#include "lobeseg/phantom.hpp"
#include "lobeseg/postprocess.hpp"
#include "test_util.hpp"

namespace lobeseg {
namespace {

void fill_box(LabelVolume& v, std::array<std::size_t, 3> lo, std::size_t edge, std::uint8_t label)
{
    for (std::size_t z = lo[2]; z < lo[2] + edge; ++z)
        for (std::size_t y = lo[1]; y < lo[1] + edge; ++y)
            for (std::size_t x = lo[0]; x < lo[0] + edge; ++x) v.at(x, y, z) = label;
}

TEST(Components, TwoCubes)
{
    LabelVolume v(Dims::cube(10), {}, 3);
    fill_box(v, {0, 0, 0}, 3, 1);
    fill_box(v, {6, 6, 6}, 2, 1);
    auto c = connected_components(v);
    ASSERT_EQ(c.table.size(), 2u);
    EXPECT_EQ(c.table[0].count, 27u);
    EXPECT_EQ(c.table[1].count, 8u);
}

TEST(Components, CornerContactIsSeparate)
{
    LabelVolume v(Dims::cube(3), {}, 3);
    v.at(0, 0, 0) = 1;
    v.at(1, 1, 1) = 1;
    EXPECT_EQ(connected_components(v).table.size(), 2u);
    v.at(1, 0, 0) = 1;
    v.at(1, 1, 0) = 1;
    EXPECT_EQ(connected_components(v).table.size(), 1u);
}

/// BFS flood fill counting components; independent of the library routine.
std::size_t flood_fill_count(const LabelVolume& v)
{
    std::vector<char> seen(v.size(), 0);
    std::size_t count = 0;
    const Dims& d = v.dims;
    for (std::size_t s = 0; s < v.size(); ++s) {
        if (v[s] == 0 || seen[s]) continue;
        ++count;
        std::queue<std::size_t> q;
        q.push(s);
        seen[s] = 1;
        while (!q.empty()) {
            const auto i = q.front();
            q.pop();
            const auto p = d.coords(i);
            for (int a = 0; a < 3; ++a)
                for (int step : {-1, 1}) {
                    auto c = p;
                    if (step < 0 && c[a] == 0) continue;
                    c[a] = step < 0 ? c[a] - 1 : c[a] + 1;
                    if (c[0] >= d.x || c[1] >= d.y || c[2] >= d.z) continue;
                    const auto n = d.index(c[0], c[1], c[2]);
                    if (!seen[n] && v[n] == v[s]) {
                        seen[n] = 1;
                        q.push(n);
                    }
                }
        }
    }
    return count;
}

TEST(Components, MatchesFloodFillOracle)
{
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        auto v = test::random_labels(Dims::cube(16), 3, rng);
        const auto c = connected_components(v);
        EXPECT_EQ(c.table.size(), flood_fill_count(v));
        std::vector<std::size_t> per_label(3, 0), voxels(3, 0);
        for (const auto& info : c.table) per_label[static_cast<std::size_t>(info.label)] += info.count;
        for (auto x : v.data) ++voxels[x];
        EXPECT_EQ(per_label[1], voxels[1]);
        EXPECT_EQ(per_label[2], voxels[2]);
    }
}

TEST(KeepLargest, CleanSegmentationUnchanged)
{
    LabelVolume v(Dims::cube(6), {}, 3);
    fill_box(v, {0, 0, 0}, 3, 1);
    fill_box(v, {3, 3, 3}, 3, 2);
    EXPECT_EQ(keep_largest(v, connected_components(v)).seg, v);
}

TEST(KeepLargest, SmallIslandRemoved)
{
    LabelVolume v(Dims::cube(12), {}, 3);
    fill_box(v, {0, 0, 0}, 4, 1);
    v.at(10, 10, 10) = 1;
    auto r = keep_largest(v, connected_components(v)).seg;
    EXPECT_EQ(r.at(10, 10, 10), 0);
    EXPECT_EQ(r.at(1, 1, 1), 1);
}

TEST(KeepLargest, TieKeepsSmallerSeedIndex)
{
    LabelVolume v(Dims{7, 1, 1}, {}, 3);
    v[1] = v[2] = 1;
    v[4] = v[5] = 1;
    auto r = keep_largest(v, connected_components(v));
    EXPECT_EQ(r.seg[1], 1);
    EXPECT_EQ(r.seg[4], 0);
    EXPECT_EQ(r.warnings.size(), 1u); // lobe 2 absent
}

TEST(VoronoiFill, EnclosedHole)
{
    LabelVolume v(Dims::cube(3), {}, 3, 1);
    v.at(1, 1, 1) = 0;
    Mask lung(v.dims, {}, 1);
    EXPECT_EQ(voronoi_fill(v, lung).at(1, 1, 1), 1);
}

TEST(VoronoiFill, EquidistantTakesSmallerIndexSeed)
{
    LabelVolume v(Dims{5, 1, 1}, {}, 3);
    v[0] = 2;
    v[4] = 1;
    Mask lung(v.dims, {}, 1);
    auto r = voronoi_fill(v, lung);
    EXPECT_EQ(r[2], 2);
    EXPECT_EQ(r[1], 2);
    EXPECT_EQ(r[3], 1);
}

TEST(VoronoiFill, NoSeedsInLungThrows)
{
    LabelVolume v(Dims::cube(3), {}, 3);
    EXPECT_THROW(voronoi_fill(v, Mask(v.dims, {}, 1)), NumericError);
}

TEST(LungMask, Identities)
{
    std::mt19937_64 rng(2);
    auto v = test::random_labels(Dims::cube(5), 3, rng);
    EXPECT_EQ(apply_lung_mask(v, Mask(v.dims, {}, 1)), v);
    for (auto x : apply_lung_mask(v, Mask(v.dims, {}, 0)).data) EXPECT_EQ(x, 0);
}

TEST(Postprocess, CleanReferenceRoundTrips)
{
    PhantomSpec s;
    s.dims = Dims::cube(32);
    s.side = Side::right;
    const auto c = generate(s);
    auto r = postprocess(one_hot(c.ref), c.lung, Side::right);
    EXPECT_EQ(r.seg, c.ref);
    EXPECT_TRUE(r.warnings.empty());
}

TEST(Postprocess, IslandReassignedToEnclosingLobe)
{
    PhantomSpec s;
    s.dims = Dims::cube(32);
    const auto c = generate(s);
    LabelVolume pred = c.ref;
    // Find a lobe-1 voxel whose 5^3 neighbourhood is all lobe 1.
    std::size_t target = 0;
    for (std::size_t i = 0; i < pred.size() && !target; ++i) {
        const auto [x, y, z] = pred.dims.coords(i);
        if (x < 2 || y < 2 || z < 2 || x + 2 >= 32 || y + 2 >= 32 || z + 2 >= 32) continue;
        bool ok = true;
        for (int dz = -2; dz <= 2; ++dz)
            for (int dy = -2; dy <= 2; ++dy)
                for (int dx = -2; dx <= 2; ++dx)
                    ok = ok && pred.at(x + dx, y + dy, z + dz) == 1;
        if (ok) target = i;
    }
    ASSERT_NE(target, 0u);
    pred[target] = 2;
    auto r = postprocess(one_hot(pred), c.lung, Side::left);
    EXPECT_EQ(r.seg[target], 1);
    EXPECT_EQ(r.seg, c.ref);
}

LabelVolume perturb(const PhantomCase& c, std::mt19937_64& rng)
{
    LabelVolume p = c.ref;
    const Dims& d = p.dims;
    for (int k = 0; k < 6; ++k) {
        const std::size_t edge = 1 + rng() % 3;
        const std::array<std::size_t, 3> lo{rng() % (d.x - edge), rng() % (d.y - edge), rng() % (d.z - edge)};
        fill_box(p, lo, edge, static_cast<std::uint8_t>(rng() % static_cast<unsigned>(p.num_labels)));
    }
    return p;
}

TEST(Postprocess, InvariantsOnPerturbedPredictions)
{
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 8; ++trial) {
        PhantomSpec s;
        s.dims = Dims::cube(32);
        s.side = trial % 2 ? Side::right : Side::left;
        s.seed = static_cast<std::uint64_t>(trial);
        const auto c = generate(s);
        const auto pred = perturb(c, rng);
        auto r = postprocess(one_hot(pred), c.lung, s.side);
        EXPECT_TRUE(covers_lung_exactly(r.seg, c.lung));
        EXPECT_EQ(connected_components(r.seg).table.size(), static_cast<std::size_t>(num_labels_for(s.side) - 1));
        EXPECT_EQ(postprocess(one_hot(r.seg), c.lung, s.side).seg, r.seg);
    }
}

TEST(Postprocess, WrongLabelCountRejected)
{
    ProbVolume p(Dims::cube(3), {}, 4);
    EXPECT_THROW(postprocess(p, Mask(p.dims, {}, 1), Side::left), ShapeError);
}

} // namespace
} // namespace lobeseg
