#pragma once

// Probability models for quantized coefficients.
//
// Both models describe each coefficient with a learned monotone cumulative
// function c(x) = sigmoid(L(x)), where L is a 1-3-3-3-1 network with
// nonnegative (softplus) weights and tanh gates, 58 raw parameters in all.
// The factorized model keeps one parameter vector per band; the context
// model predicts a vector per voxel from already coded data. Models work in
// coefficient units, so a symbol q covers [(q - 1/2) QS, (q + 1/2) QS].

#include "voxwave/nn.hpp"
#include "voxwave/transform.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace voxwave {

inline constexpr int kCumulativeParams = 58;
inline constexpr double kProbFloor = 1.0 / 65536.0;
inline constexpr int kFreqBits = 16;
inline constexpr std::uint32_t kFreqTotal = 1u << kFreqBits;
inline constexpr std::int64_t kMaxSupport = 1 << 14;

using RawParams = std::array<double, kCumulativeParams>;

/// Raw layout: H1[3] b1[3] a1[3], three times {H[3x3] b[3] a[3]}, H5[3] b5.
namespace cumulative_layout {
inline constexpr int h1 = 0, b1 = 3, a1 = 6;
inline constexpr int layer(int k) { return 9 + 15 * (k - 2); } // k = 2..4
inline constexpr int h5 = 54, b5 = 57;
} // namespace cumulative_layout

/// Raw parameters read with a stride (per-voxel tensors are channel-major).
struct RawView {
    const double* data;
    std::size_t stride = 1;
    double operator[](int i) const { return data[std::size_t(i) * stride]; }
};

/// Reparameterized cumulative model, ready for repeated evaluation.
struct Cumulative {
    double h1[3], b1[3], t1[3];
    double h[3][9], b[3][3], t[3][3];
    double h5[3], b5;

    static Cumulative from_raw(RawView raw);
    static Cumulative from_raw(const RawParams& raw) { return from_raw(RawView{raw.data(), 1}); }

    double logit(double x) const;
    double cdf(double x) const;
};

/// Raw parameters of a logistic-shaped model with the given median and scale
/// (gates off, all weights equal).
RawParams init_raw(double median, double scale);

/// Accumulates gL * dL/draw into graw (same stride convention) and returns
/// gL * dL/dx.
double logit_backward(RawView raw, double x, double gL, double* graw, std::size_t gstride);

/// max(c(x + half) - c(x - half), floor) per voxel. psi is (58, D, H, W) for
/// per-voxel parameters or (58, 1, 1, 1) for one shared model.
nn::Var interval_likelihood(const nn::Var& x, const nn::Var& psi, double half_width, double floor = kProbFloor);

/// Sum of -log2 p over a likelihood tensor.
inline nn::Var rate_bits(const nn::Var& likelihood) { return nn::neg_log2_sum(likelihood); }

// ---- discrete PMFs ---------------------------------------------------------

/// Coder-ready distribution over [lo, hi]. The two boundary symbols absorb
/// the tails; a symbol coded at a boundary is followed by an order-0
/// Exp-Golomb count of how far beyond it the true value lies.
struct DiscretePmf {
    std::int64_t lo = 0;
    std::int64_t hi = 0;
    std::vector<double> probs;      // floored, sums to 1
    std::vector<std::uint32_t> cum; // size n + 1, cum[n] = kFreqTotal

    std::size_t size() const { return probs.size(); }
    /// Symbol index and escape count for value q.
    std::pair<std::size_t, std::uint64_t> locate(std::int64_t q) const;
    /// Ideal code length of q in bits, escape bits included.
    double cost_bits(std::int64_t q) const;
    std::uint64_t hash() const;
};

/// Length of the order-0 Exp-Golomb code of v.
int exp_golomb_bits(std::uint64_t v);

/// Probability of every q in [lo, hi] with the tails folded into the end
/// points, before flooring. Throws UsageError for an empty range.
std::vector<double> interval_masses(const Cumulative& c, double qs, std::int64_t lo, std::int64_t hi);

/// Builds the floored PMF and its 16-bit frequency table over [lo, hi].
DiscretePmf discretize(const Cumulative& c, double qs, std::int64_t lo, std::int64_t hi);
/// Same, with the support chosen from the model's tails.
DiscretePmf discretize(const Cumulative& c, double qs);
std::pair<std::int64_t, std::int64_t> choose_support(const Cumulative& c, double qs);

/// Sum of ideal code lengths of the integer symbols in q.
double subband_rate(const nn::Tensor& q, const DiscretePmf& pmf);

// ---- factorized model --------------------------------------------------------

struct FactorizedModel {
    std::vector<nn::Var> bands; // one (58, 1, 1, 1) parameter per band position

    static FactorizedModel create(int levels);
    /// Re-initialize each band from the median and spread of its coefficients.
    void init_from_data(const std::vector<SubbandSet>& samples);
    void append_params(const std::string& prefix, std::vector<nn::NamedParam>& out) const;
    std::size_t parameter_count() const { return bands.size() * kCumulativeParams; }
};

/// Median and logistic scale of a sample set, used to seed cumulative models.
std::pair<double, double> robust_location_scale(std::vector<double> values);

// ---- context model -----------------------------------------------------------

/// Channels of the coarse-context input: 8 band slots then 8 one-hot slots.
inline constexpr int kContextInputs = 16;

class ContextCursor;

/// Per-voxel parameter predictor. Coarse context C_t comes from one
/// convolution over the coded-band slots; two residual blocks give C_b;
/// masked convolutions over (C_t, current band) give C_w; two pointwise
/// layers merge (C_b, C_w) into an offset added to a per-band base vector.
struct ContextModel {
    int width = 16;
    nn::ConvLayer extract;
    nn::ResidualBlock between1, between2;
    nn::ConvLayer within_a, within_b;
    nn::ConvLayer merge1, merge2;
    std::vector<nn::Var> base; // (58, 1, 1, 1) per band position

    static ContextModel create(int levels, int width, nn::Rng& rng);

    /// Slot inputs for band `pos`: slot 0 holds the LLL of the band's level
    /// rebuilt from deeper bands, slots 1..7 the already coded high bands of
    /// the same level, then the one-hot band index. Bands at positions
    /// below `pos` must be present in `coded` (dequantized values).
    nn::Tensor band_input(const SubbandSet& coded, std::size_t pos, const Transform& t, const LiftContext& ctx,
                          double value_scale) const;
    /// Same, differentiable with respect to the coded bands.
    nn::Var band_input_var(const SubbandSet& coded, std::size_t pos, const Transform& t, const LiftContext& ctx,
                           double value_scale) const;

    /// Parameters for a whole band at once (training and tests).
    nn::Var psi(const nn::Var& input, const nn::Var& current_scaled, std::size_t pos) const;

    /// Raster-order evaluator used identically by encoder and decoder.
    ContextCursor cursor(const nn::Tensor& input, std::size_t pos, double value_scale) const;

    void append_params(const std::string& prefix, std::vector<nn::NamedParam>& out) const;
    std::size_t parameter_count() const;
};

/// Walks a band in raster order: psi_at(p) must be followed by commit(p)
/// before the next voxel. Values at raster positions >= p are never read.
class ContextCursor {
public:
    ContextCursor(const ContextModel& m, const nn::Tensor& input, std::size_t pos, double value_scale);

    /// Writes 58 raw parameters for voxel (z, y, x).
    void psi_at(int z, int y, int x, double* out);
    /// Records the dequantized value of voxel (z, y, x).
    void commit(int z, int y, int x, double value);

private:
    std::size_t pidx(int c, int z, int y, int x) const;

    const ContextModel& m_;
    std::size_t pos_;
    double scale_;
    nn::Shape s_;                 // band shape (1, D, H, W)
    std::vector<double> ct_;      // C_t, zero padded, C channels
    std::vector<double> cur_;     // current band * scale, zero padded
    std::vector<double> feat_a_;  // relu(within_a), zero padded
    nn::Tensor cb_;               // C_b, unpadded
    std::vector<double> hidden_;  // scratch
};

} // namespace voxwave
