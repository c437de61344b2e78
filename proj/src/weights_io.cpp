#include "voxwave/weights_io.hpp"

#include "voxwave/bytes.hpp"
#include "voxwave/errors.hpp"

namespace voxwave {

namespace {
constexpr char kMagic[4] = {'V', 'X', 'W', 'M'};
}

std::vector<std::uint8_t> serialize_weights(const std::vector<NamedTensor>& tensors)
{
    ByteWriter w;
    w.text(std::string_view(kMagic, 4));
    w.u32(std::uint32_t(tensors.size()));
    for (const auto& t : tensors) {
        w.u32(std::uint32_t(t.name.size()));
        w.text(t.name);
        const auto& s = t.tensor.shape();
        w.u8(4);
        w.u32(std::uint32_t(s.c));
        w.u32(std::uint32_t(s.d));
        w.u32(std::uint32_t(s.h));
        w.u32(std::uint32_t(s.w));
        for (double v : t.tensor.span())
            w.f32(float(v));
    }
    w.u32(crc32(w.buffer()));
    return w.take();
}

std::vector<NamedTensor> parse_weights(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < 12)
        throw FormatError("weight file too short");
    auto body = bytes.first(bytes.size() - 4);
    ByteReader tail(bytes.subspan(bytes.size() - 4));
    if (crc32(body) != tail.u32())
        throw FormatError("weight file CRC mismatch");
    try {
        ByteReader r(body);
        if (r.text(4) != std::string_view(kMagic, 4))
            throw FormatError("weight file has bad magic");
        std::uint32_t count = r.u32();
        std::vector<NamedTensor> out;
        out.reserve(count);
        for (std::uint32_t i = 0; i < count; ++i) {
            NamedTensor t;
            t.name = r.text(r.u32());
            int rank = r.u8();
            if (rank < 1 || rank > 4)
                throw FormatError("tensor '" + t.name + "' has unsupported rank");
            int dims[4] = {1, 1, 1, 1};
            for (int k = 0; k < rank; ++k)
                dims[4 - rank + k] = int(r.u32());
            nn::Shape s{dims[0], dims[1], dims[2], dims[3]};
            nn::Tensor tensor(s);
            for (auto& v : tensor.vec())
                v = double(r.f32());
            t.tensor = std::move(tensor);
            out.push_back(std::move(t));
        }
        if (r.remaining() != 0)
            throw FormatError("trailing bytes in weight file");
        return out;
    } catch (const DecodeError& e) {
        throw FormatError(std::string("truncated weight file: ") + e.what());
    }
}

void save_weights(const std::string& path, const std::vector<NamedTensor>& tensors)
{
    write_file(path, serialize_weights(tensors));
}

std::vector<NamedTensor> load_weights(const std::string& path) { return parse_weights(read_file(path)); }

} // namespace voxwave
