#include "voxwave/range_coder.hpp"

#include "voxwave/bytes.hpp"
#include "voxwave/errors.hpp"

#include <algorithm>

namespace voxwave {

namespace {

constexpr std::uint32_t kTop = 1u << 24;
constexpr char kStreamMagic[4] = {'V', 'X', 'W', 'B'};
constexpr int kMaxGolombPrefix = 62;

} // namespace

// ---- encoder ---------------------------------------------------------------

void RangeEncoder::shift_low()
{
    if (std::uint32_t(low_) < 0xFF000000u || (low_ >> 32) != 0) {
        std::uint8_t carry = std::uint8_t(low_ >> 32);
        std::uint8_t temp = cache_;
        do {
            out_.push_back(std::uint8_t(temp + carry));
            temp = 0xFF;
        } while (--cache_size_ != 0);
        cache_ = std::uint8_t(low_ >> 24);
    }
    ++cache_size_;
    low_ = (low_ & 0x00FFFFFFu) << 8;
}

void RangeEncoder::encode(std::uint32_t cum, std::uint32_t freq, int total_bits)
{
    if (freq == 0 || cum + freq > (1u << total_bits))
        throw UsageError("range coder: empty or out-of-range interval");
    std::uint32_t r = range_ >> total_bits;
    low_ += std::uint64_t(r) * cum;
    range_ = r * freq;
    while (range_ < kTop) {
        range_ <<= 8;
        shift_low();
    }
}

void RangeEncoder::encode_bits(std::uint64_t value, int nbits)
{
    while (nbits > 0) {
        int chunk = std::min(nbits, 16);
        nbits -= chunk;
        encode(std::uint32_t((value >> nbits) & ((1u << chunk) - 1)), 1, chunk);
    }
}

void RangeEncoder::encode_exp_golomb(std::uint64_t v)
{
    std::uint64_t u = v + 1;
    int n = 0;
    while ((u >> (n + 1)) != 0)
        ++n;
    for (int i = 0; i < n; ++i)
        encode_bits(0, 1);
    // The terminating 1 is its own symbol, as the decoder reads it.
    encode_bits(1, 1);
    encode_bits(u & ((std::uint64_t(1) << n) - 1), n);
}

void RangeEncoder::encode_symbol(const DiscretePmf& pmf, std::int64_t q)
{
    auto [idx, extra] = pmf.locate(q);
    encode(pmf.cum[idx], pmf.cum[idx + 1] - pmf.cum[idx]);
    if (idx == 0 || idx + 1 == pmf.size())
        encode_exp_golomb(extra);
}

std::vector<std::uint8_t> RangeEncoder::finish()
{
    for (int i = 0; i < 5; ++i)
        shift_low();
    return std::move(out_);
}

// ---- decoder ---------------------------------------------------------------

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> bytes) : in_(bytes)
{
    for (int i = 0; i < 5; ++i)
        code_ = (code_ << 8) | next_byte();
}

std::uint8_t RangeDecoder::next_byte()
{
    if (pos_ >= in_.size())
        throw DecodeError("range decoder read past the payload end at byte " + std::to_string(pos_), pos_);
    return in_[pos_++];
}

std::uint32_t RangeDecoder::decode_freq(int total_bits)
{
    range_ >>= total_bits;
    std::uint32_t v = code_ / range_;
    if (v >= (1u << total_bits))
        throw DecodeError("corrupt range-coded payload near byte " + std::to_string(pos_), pos_);
    return v;
}

void RangeDecoder::consume(std::uint32_t cum, std::uint32_t freq)
{
    code_ -= cum * range_;
    range_ *= freq;
    while (range_ < kTop) {
        code_ = (code_ << 8) | next_byte();
        range_ <<= 8;
    }
}

std::uint64_t RangeDecoder::decode_bits(int nbits)
{
    std::uint64_t v = 0;
    while (nbits > 0) {
        int chunk = std::min(nbits, 16);
        nbits -= chunk;
        std::uint32_t c = decode_freq(chunk);
        consume(c, 1);
        v = (v << chunk) | c;
    }
    return v;
}

std::uint64_t RangeDecoder::decode_exp_golomb()
{
    int n = 0;
    while (decode_bits(1) == 0)
        if (++n > kMaxGolombPrefix)
            throw DecodeError("escape code too long near byte " + std::to_string(pos_), pos_);
    std::uint64_t u = (std::uint64_t(1) << n) | decode_bits(n);
    return u - 1;
}

std::int64_t RangeDecoder::decode_symbol(const DiscretePmf& pmf)
{
    std::uint32_t v = decode_freq();
    auto it = std::upper_bound(pmf.cum.begin(), pmf.cum.end(), v);
    std::size_t idx = std::size_t(it - pmf.cum.begin()) - 1;
    consume(pmf.cum[idx], pmf.cum[idx + 1] - pmf.cum[idx]);
    if (idx == 0)
        return pmf.lo - std::int64_t(decode_exp_golomb());
    if (idx + 1 == pmf.size())
        return pmf.hi + std::int64_t(decode_exp_golomb());
    return pmf.lo + std::int64_t(idx);
}

CodedPayload encode_symbols(std::span<const std::int64_t> symbols, std::span<const DiscretePmf> pmfs)
{
    if (symbols.size() != pmfs.size())
        throw UsageError("encode_symbols: one PMF per symbol required");
    RangeEncoder enc;
    for (std::size_t i = 0; i < symbols.size(); ++i)
        enc.encode_symbol(pmfs[i], symbols[i]);
    return {enc.finish(), symbols.size()};
}

std::vector<std::int64_t> decode_symbols(std::span<const std::uint8_t> bytes, std::span<const DiscretePmf> pmfs)
{
    RangeDecoder dec(bytes);
    std::vector<std::int64_t> out;
    out.reserve(pmfs.size());
    for (const auto& p : pmfs)
        out.push_back(dec.decode_symbol(p));
    return out;
}

// ---- container -------------------------------------------------------------

void BitstreamHeader::write(ByteWriter& w) const
{
    w.text(std::string_view(kStreamMagic, 4));
    w.u8(version);
    for (int a = 0; a < 3; ++a)
        w.u32(std::uint32_t(block_dims[a]));
    w.u8(levels);
    for (auto a : axis_order)
        w.u8(a);
    w.u8(transform_kind);
    w.u8(sharing);
    w.u8(granularity);
    w.u8(lossless ? 1 : 0);
    w.f64(qs);
    w.u8(std::uint8_t(entropy));
    w.u64(model_hash);
    for (int a = 0; a < 3; ++a)
        w.u32(std::uint32_t(original_dims[a]));
    w.u8(bit_depth);
    w.u8(is_signed ? 1 : 0);
    w.u8(normalized ? 1 : 0);
    w.f64(norm_min);
    w.f64(norm_max);
    w.u8(rounding);
}

BitstreamHeader BitstreamHeader::read(ByteReader& r)
{
    if (r.text(4) != std::string_view(kStreamMagic, 4))
        throw DecodeError("not a compressed volume stream (bad magic)", 0);
    BitstreamHeader h;
    h.version = r.u8();
    if (h.version != kVersion)
        throw DecodeError("unsupported stream version " + std::to_string(h.version), 4);
    for (int a = 0; a < 3; ++a)
        h.block_dims[a] = int(r.u32());
    h.levels = r.u8();
    for (auto& a : h.axis_order)
        a = r.u8();
    h.transform_kind = r.u8();
    h.sharing = r.u8();
    h.granularity = r.u8();
    h.lossless = r.u8() != 0;
    h.qs = r.f64();
    h.entropy = EntropyKind(r.u8());
    h.model_hash = r.u64();
    for (int a = 0; a < 3; ++a)
        h.original_dims[a] = int(r.u32());
    h.bit_depth = r.u8();
    h.is_signed = r.u8() != 0;
    h.normalized = r.u8() != 0;
    h.norm_min = r.f64();
    h.norm_max = r.f64();
    h.rounding = r.u8();
    return h;
}

std::vector<std::uint8_t> write_bitstream(const Bitstream& bs)
{
    ByteWriter w;
    bs.header.write(w);
    for (const auto& rec : bs.records) {
        w.u32(rec.block);
        w.u8(rec.band);
        w.u32(std::uint32_t(rec.payload.size()));
        w.bytes(rec.payload);
    }
    w.u32(crc32(w.buffer()));
    return w.take();
}

Bitstream read_bitstream(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < 4)
        throw DecodeError("stream shorter than its checksum", 0);
    auto body = bytes.first(bytes.size() - 4);
    ByteReader tail(bytes.subspan(bytes.size() - 4));
    if (crc32(body) != tail.u32())
        throw DecodeError("stream checksum mismatch (corrupt or truncated)", bytes.size() - 4);
    ByteReader r(body);
    Bitstream bs;
    bs.header = BitstreamHeader::read(r);
    while (r.remaining() > 0) {
        BandRecord rec;
        rec.block = r.u32();
        rec.band = r.u8();
        std::uint32_t n = r.u32();
        auto p = r.bytes(n);
        rec.payload.assign(p.begin(), p.end());
        bs.records.push_back(std::move(rec));
    }
    return bs;
}

} // namespace voxwave
