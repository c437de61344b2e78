#include "voxwave/bytes.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>

#include <zlib.h>

namespace voxwave {

std::uint32_t crc32(std::span<const std::uint8_t> data)
{
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed large buffers in chunks.
    std::size_t off = 0;
    while (off < data.size()) {
        std::size_t n = std::min<std::size_t>(data.size() - off, 1u << 30);
        crc = ::crc32(crc, data.data() + off, uInt(n));
        off += n;
    }
    return std::uint32_t(crc);
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> data, std::uint64_t seed)
{
    std::uint64_t h = seed;
    for (auto b : data) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::vector<std::uint8_t> read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open '" + path + "' for reading");
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad())
        throw IoError("read failed for '" + path + "'");
    return data;
}

void write_file(const std::string& path, std::span<const std::uint8_t> data)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size()));
    if (!out)
        throw IoError("write failed for '" + path + "'");
}

} // namespace voxwave
