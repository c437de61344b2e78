#pragma once

// Encoder / decoder pipelines and the model bundle they share.

#include "voxwave/entropy.hpp"
#include "voxwave/quantizer.hpp"
#include "voxwave/range_coder.hpp"
#include "voxwave/transform.hpp"
#include "voxwave/weights_io.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace voxwave {

/// Enhancement network applied to lossy reconstructions:
/// x + tail(blocks(head(x * s))) / s with s = 2^-bit_depth.
struct PostProcessor {
    nn::ConvLayer head;
    std::vector<nn::ResidualBlock> blocks;
    nn::ConvLayer tail;

    /// Six residual blocks; the tail starts at zero so the network starts as
    /// the identity.
    static PostProcessor create(int width, nn::Rng& rng, int block_count = 6);
    bool enabled() const { return head.out_channels > 0; }
    nn::Var forward(const nn::Var& x, double input_scale) const;
    void append_params(const std::string& prefix, std::vector<nn::NamedParam>& out) const;
    std::size_t parameter_count() const;
};

struct CodecConfig {
    TransformConfig transform;
    EntropyKind entropy = EntropyKind::factorized;
    double qs = 1.0;
    int context_width = 16;
    int post_width = 16; // 0 disables post-processing
    Dims block_dims{64, 64, 64};
};

enum class ModuleGroup { transform, entropy, post };

class CodecModel {
public:
    CodecConfig config;
    Transform transform;
    FactorizedModel factorized;
    ContextModel context;
    PostProcessor post;

    static CodecModel create(const CodecConfig& cfg, std::uint64_t seed);

    std::vector<nn::NamedParam> params() const;
    std::vector<nn::NamedParam> params(ModuleGroup group) const;
    std::size_t parameter_count() const;

    /// Round every weight to float32, the precision of the weight file, so a
    /// model behaves identically before and after a save/load cycle.
    void canonicalize();

    std::vector<NamedTensor> to_tensors() const;
    /// Throws FormatError on missing or mis-shaped tensors.
    static CodecModel from_tensors(const std::vector<NamedTensor>& tensors);
    std::uint64_t hash() const;
    void save(const std::string& path) const;
    static CodecModel load(const std::string& path);

    LiftContext lift_context(int bit_depth) const { return transform.context(bit_depth); }
    /// Quantization step actually applied (1 for the integer transform).
    double effective_qs() const { return config.transform.lossless ? 1.0 : config.qs; }
};

/// Scale applied to coefficients before they enter the context networks.
double context_value_scale(int bit_depth);

enum class CodecMode { lossy, lossless };

struct CodecOptions {
    int jobs = 1;
    /// Receives one hash per coded PMF in coding order (debug aid).
    std::vector<std::uint64_t>* pmf_trace = nullptr;
};

/// Throws ConfigError when `mode` does not match the model's transform.
std::vector<std::uint8_t> encode_volume(const Volume& v, const CodecModel& model, CodecMode mode,
                                        const CodecOptions& opt = {});
/// Throws DecodeError on CRC failure, truncation or a model mismatch.
Volume decode_volume(std::span<const std::uint8_t> stream, const CodecModel& model, const CodecOptions& opt = {});

/// Block dims used for a volume: the configured dims, shrunk to the volume
/// rounded up to a multiple of 2^levels.
Dims effective_block_dims(Dims volume, Dims configured, int levels);

/// Lossy decode of one block from its quantized subbands (no entropy coding).
Volume reconstruct_block(const SubbandSet& q, const CodecModel& model, int bit_depth, bool is_signed);

struct Metrics {
    double psnr = 0.0; // +inf for identical volumes
    double bpp = 0.0;
    double mse = 0.0;
};

double mse(const Volume& a, const Volume& b);
/// 10 log10(MAX^2 / MSE), MAX = 2^bit_depth - 1; +inf when MSE = 0.
double psnr(const Volume& a, const Volume& b);
double bits_per_sample(std::size_t stream_bytes, std::size_t samples);
Metrics metrics(const Volume& x, const Volume& xhat, std::size_t stream_bytes);

} // namespace voxwave
