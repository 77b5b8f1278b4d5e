#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "lobeseg/metaimage.hpp"
#include "lobeseg/volume.hpp"
#include "test_util.hpp"

namespace lobeseg {
namespace {

TEST(Volume, LinearLayoutMatchesCoordinates)
{
    const Dims d{5, 3, 4};
    for (std::size_t z = 0; z < d.z; ++z)
        for (std::size_t y = 0; y < d.y; ++y)
            for (std::size_t x = 0; x < d.x; ++x) {
                const std::size_t i = d.index(x, y, z);
                EXPECT_EQ(i, x + d.x * (y + d.y * z));
                auto c = d.coords(i);
                EXPECT_EQ(c[0], x);
                EXPECT_EQ(c[1], y);
                EXPECT_EQ(c[2], z);
            }
}

TEST(Volume, OneHotSingleVoxel)
{
    LabelVolume v(Dims{1, 1, 1}, {}, 4);
    v[0] = 2;
    auto p = one_hot(v);
    EXPECT_EQ(p.at(0, 0), 0.0);
    EXPECT_EQ(p.at(1, 0), 0.0);
    EXPECT_EQ(p.at(2, 0), 1.0);
    EXPECT_EQ(p.at(3, 0), 0.0);
}

TEST(Volume, OneHotBackground)
{
    LabelVolume v(Dims::cube(3), {}, 3);
    auto p = one_hot(v);
    for (double x : p.channel(0)) EXPECT_EQ(x, 1.0);
    for (double x : p.channel(1)) EXPECT_EQ(x, 0.0);
}

TEST(Volume, OneHotArgmaxIsIdentity)
{
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        auto v = test::random_labels(Dims::cube(8), 3, rng);
        auto p = one_hot(v);
        for (std::size_t i = 0; i < v.size(); ++i) {
            double sum = 0;
            for (int l = 0; l < 3; ++l) sum += p.at(l, i);
            EXPECT_EQ(sum, 1.0);
        }
        EXPECT_EQ(argmax(p), v);
    }
}

TEST(Volume, ArgmaxTiesGoToLowerLabel)
{
    ProbVolume p(Dims{1, 1, 1}, {}, 3, 1.0 / 3.0);
    EXPECT_EQ(argmax(p)[0], 0);
    p.at(0, 0) = 0.2;
    p.at(1, 0) = 0.4;
    p.at(2, 0) = 0.4;
    EXPECT_EQ(argmax(p)[0], 1);
}

class MetaImageTest : public ::testing::Test {
protected:
    test::TempDir dir;
};

TEST_F(MetaImageTest, UcharBytesReadAsLabels)
{
    const auto path = dir.path() / "bytes.mha";
    std::ofstream f(path, std::ios::binary);
    f << "ObjectType = Image\nNDims = 3\nDimSize = 2 2 2\nElementSpacing = 1.5 1.5 1.5\n"
         "ElementType = MET_UCHAR\nElementDataFile = LOCAL\n";
    for (char b = 0; b < 8; ++b) f.put(b);
    f.close();
    auto v = read_labels(path);
    EXPECT_EQ(v.num_labels, 8);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(v[i], i);
    EXPECT_EQ(v.spacing, Spacing::isotropic(1.5));
}

TEST_F(MetaImageTest, ShortPayloadIsRejected)
{
    const auto path = dir.path() / "short.mha";
    std::ofstream f(path, std::ios::binary);
    f << "NDims = 3\nDimSize = 2 2 2\nElementType = MET_UCHAR\nElementDataFile = LOCAL\n";
    for (char b = 0; b < 7; ++b) f.put(b);
    f.close();
    EXPECT_THROW(read_metaimage(path), FormatError);
}

TEST_F(MetaImageTest, MalformedHeadersAreRejected)
{
    auto write = [&](const std::string& name, const std::string& header) {
        const auto p = dir.path() / name;
        std::ofstream f(p, std::ios::binary);
        f << header;
        f.put(0);
        return p;
    };
    EXPECT_THROW(read_metaimage(write("a.mha", "NDims = 2\nDimSize = 1 1\nElementType = MET_UCHAR\nElementDataFile = LOCAL\n")),
                 FormatError);
    EXPECT_THROW(read_metaimage(write("b.mha", "NDims = 3\nDimSize = 1 1 1\nElementType = MET_DOUBLE\nElementDataFile = LOCAL\n")),
                 FormatError);
    EXPECT_THROW(read_metaimage(write("c.mha", "NDims = 3\nDimSize = 1 1 1\nElementType = MET_UCHAR\n")), FormatError);
    EXPECT_THROW(read_metaimage(write("d.mha", "garbage line\n")), FormatError);
    EXPECT_THROW(read_metaimage(dir.path() / "missing.mha"), IoError);
}

TEST_F(MetaImageTest, LabelAboveDeclaredCountIsRejected)
{
    LabelVolume v(Dims::cube(2), {}, 4);
    v[3] = 3;
    write_metaimage(v, dir.path() / "l.mha");
    EXPECT_THROW(read_labels(dir.path() / "l.mha", 3), FormatError);
    EXPECT_EQ(read_labels(dir.path() / "l.mha", 4), v);
}

TEST_F(MetaImageTest, ScalarHeaderContract)
{
    ScalarVolume v(Dims{3, 2, 1}, {0.7, 1.1, 2.5}, -3.25f);
    write_metaimage(v, dir.path() / "s.mha");
    MetaHeader h;
    auto any = read_metaimage(dir.path() / "s.mha", std::nullopt, &h);
    EXPECT_EQ(h.get("ElementType"), "MET_FLOAT");
    EXPECT_EQ(h.get("ElementByteOrderMSB"), "False");
    EXPECT_EQ(h.get("ElementDataFile"), "LOCAL");
    EXPECT_EQ(std::get<ScalarVolume>(any), v);
}

TEST_F(MetaImageTest, LabelHeaderIsUchar)
{
    LabelVolume v(Dims::cube(2), {}, 3);
    write_metaimage(v, dir.path() / "l.mha");
    MetaHeader h;
    read_metaimage(dir.path() / "l.mha", std::nullopt, &h);
    EXPECT_EQ(h.get("ElementType"), "MET_UCHAR");
}

TEST_F(MetaImageTest, RoundTripPropertyOverRandomVolumes)
{
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> sp(0.1, 4.0);
    std::uniform_int_distribution<std::size_t> dim(1, 9);
    std::normal_distribution<float> val(0.0f, 300.0f);
    for (int trial = 0; trial < 25; ++trial) {
        Dims d{dim(rng), dim(rng), dim(rng)};
        Spacing s{sp(rng), sp(rng), sp(rng)};
        ScalarVolume sv(d, s);
        for (auto& x : sv.data) x = val(rng);
        write_metaimage(sv, dir.path() / "rt.mha");
        EXPECT_EQ(read_scalar(dir.path() / "rt.mha"), sv);

        const int labels = 2 + static_cast<int>(rng() % 5);
        auto lv = test::random_labels(d, labels, rng);
        lv.spacing = s;
        write_metaimage(lv, dir.path() / "rl.mha");
        EXPECT_EQ(read_labels(dir.path() / "rl.mha"), lv);
    }
}

TEST_F(MetaImageTest, UnknownKeysPreservedAndDetachedPayloadAccepted)
{
    {
        std::ofstream raw(dir.path() / "v.raw", std::ios::binary);
        const std::int16_t vals[2] = {1, 2};
        raw.write(reinterpret_cast<const char*>(vals), sizeof(vals));
        std::ofstream h(dir.path() / "v.mhd");
        h << "ObjectType = Image\nNDims = 3\nAnatomicalOrientation = RAI\nDimSize = 2 1 1\n"
             "ElementType = MET_SHORT\nElementDataFile = v.raw\n";
    }
    MetaHeader h;
    auto v = std::get<LabelVolume>(read_metaimage(dir.path() / "v.mhd", std::nullopt, &h));
    EXPECT_EQ(h.get("AnatomicalOrientation"), "RAI");
    EXPECT_EQ(v[0], 1);
    EXPECT_EQ(v[1], 2);
    EXPECT_EQ(v.num_labels, 3);
}

TEST_F(MetaImageTest, BigEndianPayloadIsSwapped)
{
    std::ofstream f(dir.path() / "be.mha", std::ios::binary);
    f << "NDims = 3\nDimSize = 1 1 1\nElementByteOrderMSB = True\nElementType = MET_FLOAT\nElementDataFile = LOCAL\n";
    const unsigned char one_be[4] = {0x3f, 0x80, 0x00, 0x00};
    f.write(reinterpret_cast<const char*>(one_be), 4);
    f.close();
    EXPECT_EQ(read_scalar(dir.path() / "be.mha")[0], 1.0f);
}

TEST_F(MetaImageTest, UnwritablePathThrows)
{
    ScalarVolume v(Dims::cube(1), {});
    EXPECT_THROW(write_metaimage(v, dir.path() / "no" / "such" / "dir.mha"), IoError);
}

} // namespace
} // namespace lobeseg
