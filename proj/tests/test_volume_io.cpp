#include "support.hpp"

#include "voxwave/bytes.hpp"
#include "voxwave/errors.hpp"
#include "voxwave/volume_io.hpp"

#include <doctest.h>

using namespace voxwave;

TEST_CASE("raw 8-bit file maps bytes to samples")
{
    testing::TempDir dir;
    std::vector<std::uint8_t> bytes{0, 1, 2, 3, 250, 251, 252, 255};
    write_file(dir.file("v.raw"), bytes);
    Volume v = load_raw(dir.file("v.raw"), {2, 2, 2}, 8, false);
    REQUIRE(v.data.size() == 8);
    for (std::size_t i = 0; i < 8; ++i)
        CHECK(v.data[i] == double(bytes[i]));
    CHECK(v.at(1, 1, 1) == 255.0);
    CHECK(v.at(0, 1, 0) == 2.0);
}

TEST_CASE("raw 64^3 file loads with its dims")
{
    testing::TempDir dir;
    write_file(dir.file("b.raw"), std::vector<std::uint8_t>(64 * 64 * 64, 7));
    Volume v = load_raw(dir.file("b.raw"), {64, 64, 64}, 8, false);
    CHECK(v.dims == Dims{64, 64, 64});
    CHECK(v.data.front() == 7.0);
}

TEST_CASE("raw size mismatch is a format error")
{
    testing::TempDir dir;
    write_file(dir.file("s.raw"), std::vector<std::uint8_t>(7, 0));
    CHECK_THROWS_AS(load_raw(dir.file("s.raw"), {2, 2, 2}, 8, false), FormatError);
    CHECK_THROWS_AS(load_raw(dir.file("missing.raw"), {2, 2, 2}, 8, false), IoError);
}

TEST_CASE("raw and headered files round trip at every depth")
{
    testing::TempDir dir;
    testing::Rng rng(3);
    for (int bits : {8, 16, 32})
        for (bool sgn : {false, true}) {
            Volume v({3, 4, 5}, bits, sgn);
            std::uniform_real_distribution<double> u(v.min_value(), v.max_value());
            for (auto& s : v.data)
                s = std::floor(u(rng));
            v.data[0] = v.min_value();
            v.data[1] = v.max_value();
            save_raw(dir.file("r.raw"), v);
            Volume r = load_raw(dir.file("r.raw"), v.dims, bits, sgn);
            CHECK(r.data == v.data);
            write_volume(dir.file("h.vxw"), v);
            Volume h = read_volume(dir.file("h.vxw"));
            CHECK(h.dims == v.dims);
            CHECK(h.bit_depth == bits);
            CHECK(h.is_signed == sgn);
            CHECK(h.data == v.data);
        }
}

TEST_CASE("headered file rejects bad magic")
{
    Volume v({2, 2, 2}, 8, false);
    auto bytes = encode_volume_file(v);
    bytes[0] = 'Q';
    CHECK_THROWS_AS(decode_volume_file(bytes), FormatError);
}

TEST_CASE("min-max normalization")
{
    Volume a({1, 1, 2}, 8, false);
    a.data = {0, 100};
    Volume na = normalize_minmax(a);
    CHECK(na.data == std::vector<double>{0, 65535});
    CHECK(na.bit_depth == 16);

    Volume c({1, 1, 3}, 8, false);
    c.data = {5, 5, 5};
    Volume nc = normalize_minmax(c);
    CHECK(nc.data == std::vector<double>{0, 0, 0});
    REQUIRE(nc.provenance_scale.has_value());
    CHECK(nc.provenance_scale->first == 5.0);
    CHECK(nc.provenance_scale->second == 5.0);

    // (v + 10) / 20 * 65535 = 0, 32767.5, 65535; the midpoint rounds up.
    Volume s({1, 1, 3}, 32, true);
    s.data = {-10, 0, 10};
    Volume ns = normalize_minmax(s);
    CHECK(ns.data == std::vector<double>{0, 32768, 65535});
    Volume back = denormalize(ns);
    CHECK(back.data[0] == doctest::Approx(-10));
    CHECK(back.data[2] == doctest::Approx(10));
}

TEST_CASE("tiling")
{
    auto grid = BlockGrid::for_volume({64, 64, 64}, {64, 64, 64}, 3);
    CHECK(grid.blocks_per_axis({64, 64, 64}).count() == 1);

    testing::Rng rng(5);
    Volume v({65, 64, 64}, 8, false);
    std::uniform_int_distribution<int> u(0, 255);
    for (auto& s : v.data)
        s = u(rng);
    auto g = BlockGrid::for_volume(v.dims, {64, 64, 64}, 3);
    CHECK(g.blocks_per_axis(v.dims) == Dims{2, 1, 1});
    CHECK(g.padding.d == 63);
    auto blocks = tile(v, g);
    REQUIRE(blocks.size() == 2);
    // Padded slices replicate the last real one.
    CHECK(blocks[1].at(63, 5, 9) == v.at(64, 5, 9));
    CHECK(untile(blocks, g, v.dims).data == v.data);

    Volume w({70, 50, 33}, 16, false);
    std::uniform_int_distribution<int> u16(0, 65535);
    for (auto& s : w.data)
        s = u16(rng);
    auto gw = BlockGrid::for_volume(w.dims, {32, 32, 32}, 3);
    CHECK(untile(tile(w, gw), gw, w.dims).data == w.data);

    CHECK_THROWS_AS(BlockGrid::for_volume(w.dims, {20, 32, 32}, 3), GeometryError);
}
