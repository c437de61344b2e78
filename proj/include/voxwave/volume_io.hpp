#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace voxwave {

/// (D, H, W) extents, z-major.
struct Dims {
    int d = 0;
    int h = 0;
    int w = 0;

    std::size_t count() const { return std::size_t(d) * h * w; }
    int operator[](int axis) const { return axis == 0 ? d : axis == 1 ? h : w; }
    int& operator[](int axis) { return axis == 0 ? d : axis == 1 ? h : w; }
    bool operator==(const Dims&) const = default;
    std::string str() const;
};

/// A 3-D sample array with its storage metadata. Samples are kept as doubles;
/// integer-valued volumes stay exact.
struct Volume {
    Dims dims;
    int bit_depth = 8;
    bool is_signed = false;
    std::vector<double> data;
    /// Original (min, max) when normalize_minmax produced this volume.
    std::optional<std::pair<double, double>> provenance_scale;

    Volume() = default;
    Volume(Dims dims, int bit_depth, bool is_signed);

    double& at(int z, int y, int x) { return data[index(z, y, x)]; }
    double at(int z, int y, int x) const { return data[index(z, y, x)]; }
    std::size_t index(int z, int y, int x) const
    {
        return (std::size_t(z) * dims.h + y) * dims.w + x;
    }
    /// Representable sample range for the bit depth and signedness.
    double min_value() const;
    double max_value() const;
};

/// Headerless little-endian samples; file size must equal D*H*W*bit_depth/8.
Volume load_raw(const std::string& path, Dims dims, int bit_depth, bool is_signed);
void save_raw(const std::string& path, const Volume& v);

/// Raw volume file with the 32-byte header
/// {"VXW0", u32 D, u32 H, u32 W, u8 bit_depth, u8 signed, 14 reserved}.
Volume read_volume(const std::string& path);
void write_volume(const std::string& path, const Volume& v);
std::vector<std::uint8_t> encode_volume_file(const Volume& v);
Volume decode_volume_file(const std::vector<std::uint8_t>& bytes);

/// Rescale to [0, 65535] and round; records (min, max) and sets depth 16.
Volume normalize_minmax(const Volume& v);
/// Map a normalized volume back to its original range (not rounded).
Volume denormalize(const Volume& v);

/// Block partition of a volume; partial blocks are completed by replicate
/// padding at the high end of each axis.
struct BlockGrid {
    Dims block_dims{64, 64, 64};
    Dims padding; // per-axis replicate-pad amounts for the volume it was made for

    /// Grid for `volume_dims`; throws GeometryError unless every block
    /// dimension is a positive multiple of 2^levels.
    static BlockGrid for_volume(Dims volume_dims, Dims block_dims, int levels);
    Dims blocks_per_axis(Dims volume_dims) const;
};

std::vector<Volume> tile(const Volume& v, const BlockGrid& grid);
Volume untile(const std::vector<Volume>& blocks, const BlockGrid& grid, Dims dims);

} // namespace voxwave
