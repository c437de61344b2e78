#pragma once

// Byte-oriented range coder (64-bit low, 32-bit range, carry propagation
// through a cached byte) and the compressed stream container.

#include "voxwave/bytes.hpp"
#include "voxwave/entropy.hpp"
#include "voxwave/volume_io.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace voxwave {

class RangeEncoder {
public:
    /// Code the interval [cum, cum + freq) out of 2^total_bits.
    void encode(std::uint32_t cum, std::uint32_t freq, int total_bits = kFreqBits);
    /// Equiprobable bits, most significant first.
    void encode_bits(std::uint64_t value, int nbits);
    void encode_exp_golomb(std::uint64_t v);
    void encode_symbol(const DiscretePmf& pmf, std::int64_t q);
    /// Flushes the state; the encoder must not be used afterwards.
    std::vector<std::uint8_t> finish();

private:
    void shift_low();

    std::uint64_t low_ = 0;
    std::uint32_t range_ = 0xFFFFFFFFu;
    std::uint8_t cache_ = 0;
    std::uint64_t cache_size_ = 1;
    std::vector<std::uint8_t> out_;
};

class RangeDecoder {
public:
    /// Throws DecodeError when fewer than the 5 start-up bytes are present.
    explicit RangeDecoder(std::span<const std::uint8_t> bytes);

    /// Target value in [0, 2^total_bits); must be followed by consume().
    std::uint32_t decode_freq(int total_bits = kFreqBits);
    void consume(std::uint32_t cum, std::uint32_t freq);
    std::uint64_t decode_bits(int nbits);
    std::uint64_t decode_exp_golomb();
    std::int64_t decode_symbol(const DiscretePmf& pmf);

    std::size_t position() const { return pos_; }

private:
    std::uint8_t next_byte();

    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
    std::uint32_t code_ = 0;
    std::uint32_t range_ = 0xFFFFFFFFu;
};

struct CodedPayload {
    std::vector<std::uint8_t> bytes;
    std::size_t symbol_count = 0;
};

/// One PMF per symbol.
CodedPayload encode_symbols(std::span<const std::int64_t> symbols, std::span<const DiscretePmf> pmfs);
std::vector<std::int64_t> decode_symbols(std::span<const std::uint8_t> bytes, std::span<const DiscretePmf> pmfs);

// ---- container -------------------------------------------------------------

enum class EntropyKind : std::uint8_t { factorized = 0, context = 1 };

struct BitstreamHeader {
    static constexpr std::uint8_t kVersion = 1;
    std::uint8_t version = kVersion;
    Dims block_dims;
    std::uint8_t levels = 3;
    std::array<std::uint8_t, 3> axis_order{0, 1, 2};
    std::uint8_t transform_kind = 2;
    std::uint8_t sharing = 1;
    std::uint8_t granularity = 0;
    bool lossless = false;
    double qs = 1.0;
    EntropyKind entropy = EntropyKind::factorized;
    std::uint64_t model_hash = 0;
    Dims original_dims;
    std::uint8_t bit_depth = 8;
    bool is_signed = false;
    bool normalized = false;
    double norm_min = 0.0;
    double norm_max = 0.0;
    std::uint8_t rounding = 0; // 0 = half away from zero

    void write(ByteWriter& w) const;
    /// Throws DecodeError on bad magic, version or truncation.
    static BitstreamHeader read(ByteReader& r);
    bool operator==(const BitstreamHeader&) const = default;
};

struct BandRecord {
    std::uint32_t block = 0;
    std::uint8_t band = 0; // position in coding order
    std::vector<std::uint8_t> payload;
};

struct Bitstream {
    BitstreamHeader header;
    std::vector<BandRecord> records;
};

/// Header, records {u32 block, u8 band, u32 length, payload}, CRC32.
std::vector<std::uint8_t> write_bitstream(const Bitstream& bs);
/// Throws DecodeError on CRC mismatch or truncation.
Bitstream read_bitstream(std::span<const std::uint8_t> bytes);

} // namespace voxwave
