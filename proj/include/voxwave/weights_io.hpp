#pragma once

// Weight file: "VXWM", u32 tensor count, then per tensor
//   {u32 name length, UTF-8 name, u8 rank, u32 dims[rank], float32 payload}
// all little-endian, followed by a CRC32 of everything before it.
// Names follow "module/step/layer/{weight|bias}".

#include "voxwave/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace voxwave {

struct NamedTensor {
    std::string name;
    nn::Tensor tensor;
};

std::vector<std::uint8_t> serialize_weights(const std::vector<NamedTensor>& tensors);
/// Throws FormatError on bad magic/CRC or truncation.
std::vector<NamedTensor> parse_weights(std::span<const std::uint8_t> bytes);

void save_weights(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_weights(const std::string& path);

} // namespace voxwave
