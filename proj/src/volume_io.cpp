#include "voxwave/volume_io.hpp"

#include "voxwave/bytes.hpp"
#include "voxwave/errors.hpp"

#include <algorithm>
#include <cmath>

namespace voxwave {

namespace {

constexpr char kVolumeMagic[4] = {'V', 'X', 'W', '0'};
constexpr std::size_t kHeaderBytes = 32;

void check_depth(int bit_depth)
{
    if (bit_depth != 8 && bit_depth != 16 && bit_depth != 32)
        throw ConfigError("unsupported bit depth " + std::to_string(bit_depth) + " (need 8, 16 or 32)");
}

double read_sample(ByteReader& r, int bit_depth, bool is_signed)
{
    switch (bit_depth) {
    case 8:
        return is_signed ? double(std::int8_t(r.u8())) : double(r.u8());
    case 16:
        return is_signed ? double(std::int16_t(r.u16())) : double(r.u16());
    default:
        return is_signed ? double(std::int32_t(r.u32())) : double(r.u32());
    }
}

void write_sample(ByteWriter& w, double v, const Volume& vol)
{
    double c = std::clamp(std::round(v), vol.min_value(), vol.max_value());
    switch (vol.bit_depth) {
    case 8:
        w.u8(vol.is_signed ? std::uint8_t(std::int8_t(c)) : std::uint8_t(c));
        break;
    case 16:
        w.u16(vol.is_signed ? std::uint16_t(std::int16_t(c)) : std::uint16_t(c));
        break;
    default:
        w.u32(vol.is_signed ? std::uint32_t(std::int32_t(c)) : std::uint32_t(c));
        break;
    }
}

Volume decode_samples(std::span<const std::uint8_t> bytes, Dims dims, int bit_depth, bool is_signed)
{
    Volume v(dims, bit_depth, is_signed);
    ByteReader r(bytes);
    for (auto& s : v.data)
        s = read_sample(r, bit_depth, is_signed);
    return v;
}

} // namespace

std::string Dims::str() const
{
    return std::to_string(d) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

Volume::Volume(Dims d, int depth, bool sign) : dims(d), bit_depth(depth), is_signed(sign), data(d.count(), 0.0)
{
    check_depth(depth);
    if (d.d <= 0 || d.h <= 0 || d.w <= 0)
        throw GeometryError("volume dims must be positive, got " + d.str());
}

double Volume::min_value() const
{
    return is_signed ? -std::ldexp(1.0, bit_depth - 1) : 0.0;
}

double Volume::max_value() const
{
    return is_signed ? std::ldexp(1.0, bit_depth - 1) - 1.0 : std::ldexp(1.0, bit_depth) - 1.0;
}

Volume load_raw(const std::string& path, Dims dims, int bit_depth, bool is_signed)
{
    check_depth(bit_depth);
    auto bytes = read_file(path);
    std::size_t expected = dims.count() * std::size_t(bit_depth / 8);
    if (bytes.size() != expected)
        throw FormatError("raw file '" + path + "' has " + std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(expected) + " for " + dims.str() + " at " + std::to_string(bit_depth) +
                          " bits");
    return decode_samples(bytes, dims, bit_depth, is_signed);
}

void save_raw(const std::string& path, const Volume& v)
{
    ByteWriter w;
    for (double s : v.data)
        write_sample(w, s, v);
    write_file(path, w.buffer());
}

std::vector<std::uint8_t> encode_volume_file(const Volume& v)
{
    ByteWriter w;
    w.text(std::string_view(kVolumeMagic, 4));
    w.u32(std::uint32_t(v.dims.d));
    w.u32(std::uint32_t(v.dims.h));
    w.u32(std::uint32_t(v.dims.w));
    w.u8(std::uint8_t(v.bit_depth));
    w.u8(v.is_signed ? 1 : 0);
    w.zeros(14);
    for (double s : v.data)
        write_sample(w, s, v);
    return w.take();
}

Volume decode_volume_file(const std::vector<std::uint8_t>& bytes)
{
    if (bytes.size() < kHeaderBytes)
        throw FormatError("volume file shorter than its 32-byte header");
    ByteReader r(bytes);
    if (r.text(4) != std::string_view(kVolumeMagic, 4))
        throw FormatError("volume file has bad magic (expected VXW0)");
    Dims dims;
    dims.d = int(r.u32());
    dims.h = int(r.u32());
    dims.w = int(r.u32());
    int depth = r.u8();
    bool sign = r.u8() != 0;
    r.skip(14);
    check_depth(depth);
    std::size_t expected = dims.count() * std::size_t(depth / 8);
    if (r.remaining() != expected)
        throw FormatError("volume payload has " + std::to_string(r.remaining()) + " bytes, expected " +
                          std::to_string(expected));
    return decode_samples(std::span(bytes).subspan(kHeaderBytes), dims, depth, sign);
}

Volume read_volume(const std::string& path) { return decode_volume_file(read_file(path)); }

void write_volume(const std::string& path, const Volume& v) { write_file(path, encode_volume_file(v)); }

Volume normalize_minmax(const Volume& v)
{
    auto [lo_it, hi_it] = std::minmax_element(v.data.begin(), v.data.end());
    double lo = *lo_it, hi = *hi_it;
    Volume out(v.dims, 16, false);
    out.provenance_scale = std::make_pair(lo, hi);
    if (hi == lo)
        return out; // all zeros
    double k = 65535.0 / (hi - lo);
    for (std::size_t i = 0; i < v.data.size(); ++i)
        out.data[i] = std::round((v.data[i] - lo) * k);
    return out;
}

Volume denormalize(const Volume& v)
{
    if (!v.provenance_scale)
        return v;
    auto [lo, hi] = *v.provenance_scale;
    Volume out(v.dims, 32, true);
    for (std::size_t i = 0; i < v.data.size(); ++i)
        out.data[i] = lo + v.data[i] / 65535.0 * (hi - lo);
    return out;
}

// ---- tiling ----------------------------------------------------------------

BlockGrid BlockGrid::for_volume(Dims volume_dims, Dims block_dims, int levels)
{
    int unit = 1 << levels;
    for (int a = 0; a < 3; ++a)
        if (block_dims[a] <= 0 || block_dims[a] % unit != 0)
            throw GeometryError("block dims " + block_dims.str() + " not divisible by 2^" + std::to_string(levels));
    BlockGrid g;
    g.block_dims = block_dims;
    for (int a = 0; a < 3; ++a) {
        int n = (volume_dims[a] + block_dims[a] - 1) / block_dims[a];
        g.padding[a] = n * block_dims[a] - volume_dims[a];
    }
    return g;
}

Dims BlockGrid::blocks_per_axis(Dims volume_dims) const
{
    Dims n;
    for (int a = 0; a < 3; ++a)
        n[a] = (volume_dims[a] + block_dims[a] - 1) / block_dims[a];
    return n;
}

std::vector<Volume> tile(const Volume& v, const BlockGrid& grid)
{
    Dims n = grid.blocks_per_axis(v.dims);
    const Dims& b = grid.block_dims;
    std::vector<Volume> blocks;
    blocks.reserve(n.count());
    for (int bz = 0; bz < n.d; ++bz)
        for (int by = 0; by < n.h; ++by)
            for (int bx = 0; bx < n.w; ++bx) {
                Volume blk(b, v.bit_depth, v.is_signed);
                for (int z = 0; z < b.d; ++z) {
                    int sz = std::min(bz * b.d + z, v.dims.d - 1);
                    for (int y = 0; y < b.h; ++y) {
                        int sy = std::min(by * b.h + y, v.dims.h - 1);
                        for (int x = 0; x < b.w; ++x) {
                            int sx = std::min(bx * b.w + x, v.dims.w - 1);
                            blk.at(z, y, x) = v.at(sz, sy, sx);
                        }
                    }
                }
                blocks.push_back(std::move(blk));
            }
    return blocks;
}

Volume untile(const std::vector<Volume>& blocks, const BlockGrid& grid, Dims dims)
{
    Dims n = grid.blocks_per_axis(dims);
    if (blocks.size() != n.count())
        throw GeometryError("untile: expected " + std::to_string(n.count()) + " blocks, got " +
                            std::to_string(blocks.size()));
    const Dims& b = grid.block_dims;
    Volume out(dims, blocks.empty() ? 8 : blocks[0].bit_depth, !blocks.empty() && blocks[0].is_signed);
    std::size_t k = 0;
    for (int bz = 0; bz < n.d; ++bz)
        for (int by = 0; by < n.h; ++by)
            for (int bx = 0; bx < n.w; ++bx, ++k) {
                const Volume& blk = blocks[k];
                if (!(blk.dims == b))
                    throw GeometryError("untile: block " + std::to_string(k) + " has dims " + blk.dims.str());
                for (int z = 0; z < b.d && bz * b.d + z < dims.d; ++z)
                    for (int y = 0; y < b.h && by * b.h + y < dims.h; ++y)
                        for (int x = 0; x < b.w && bx * b.w + x < dims.w; ++x)
                            out.at(bz * b.d + z, by * b.h + y, bx * b.w + x) = blk.at(z, y, x);
            }
    return out;
}

} // namespace voxwave
