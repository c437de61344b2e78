#pragma once

// One-dimensional lifting along a single axis of a volume.
//
// The step functions work in a canonical frame where the lifting axis is z
// (spatial axis 0); callers rotate other axes into place with swap_axes, so a
// network shared between axes always sees the lifting direction first.

#include "voxwave/autograd.hpp"
#include "voxwave/nn.hpp"
#include "voxwave/volume_io.hpp"

#include <variant>
#include <vector>

namespace voxwave {

enum class LiftMode { float_lossy, integer_lossless };

/// Lower bound applied to every affine map so the inverse never divides by ~0.
inline constexpr double kAffineFloor = 1e-3;

/// Linear filter along the lifting axis of the sub-band grid:
/// out[m] = sum_k taps[k] * in[m + offsets[k]], replicate boundary (which is
/// whole-sample symmetric extension of the interleaved signal).
struct FixedTaps {
    std::vector<int> offsets;
    std::vector<double> taps;
};

/// A prediction or update operator: fixed taps or a learned network.
using LiftFilter = std::variant<FixedTaps, nn::LiftNet>;

/// Gain map A or B of an affine lifting step.
struct AffineMap {
    enum class Kind { identity, scalar, network };
    Kind kind = Kind::identity;
    nn::Var raw_scalar; // coarse: one trainable pre-sigmoid value
    nn::LiftNet net;    // fine: per-voxel map

    static AffineMap identity() { return {}; }
    static AffineMap coarse(double raw = 0.0);
    static AffineMap fine(int width, nn::Rng& rng);
};

struct LiftingStep {
    LiftFilter predictor;
    LiftFilter updater;
    AffineMap affine_a;
    AffineMap affine_b;
};

/// Steps applied in order, then low *= low_gain and high *= high_gain.
struct LiftingScheme {
    std::vector<LiftingStep> steps;
    double low_gain = 1.0;
    double high_gain = 1.0;
};

/// Runtime settings shared by every step of a transform.
struct LiftContext {
    LiftMode mode = LiftMode::float_lossy;
    /// Networks see samples * input_scale and their P/U outputs are divided
    /// by it again.
    double input_scale = 1.0 / 256.0;
};

struct AxisSplit {
    nn::Var even;
    nn::Var odd;
};

struct LiftedPair {
    nn::Var low;
    nn::Var high;
};

// ---- canonical-frame (axis z) operations on (1, D, H, W) tensors -----------

AxisSplit split(const nn::Var& x);
nn::Var merge(const AxisSplit& s);

nn::Var apply_filter(const LiftFilter& f, const nn::Var& x, const LiftContext& ctx);
/// Affine map value in [kAffineFloor, 1]; single element for identity/coarse.
nn::Var apply_affine(const AffineMap& a, const nn::Var& x, const LiftContext& ctx);

LiftedPair lift_forward(const AxisSplit& s, const LiftingStep& step, const LiftContext& ctx);
AxisSplit lift_inverse(const LiftedPair& p, const LiftingStep& step, const LiftContext& ctx);

LiftedPair scheme_forward(const nn::Var& x, const LiftingScheme& scheme, const LiftContext& ctx);
nn::Var scheme_inverse(const LiftedPair& p, const LiftingScheme& scheme, const LiftContext& ctx);

/// Canonical-frame wrappers for an arbitrary axis (0 = z, 1 = y, 2 = x).
LiftedPair scheme_forward_axis(const nn::Var& x, int axis, const LiftingScheme& scheme, const LiftContext& ctx);
nn::Var scheme_inverse_axis(const LiftedPair& p, int axis, const LiftingScheme& scheme, const LiftContext& ctx);

// ---- fixed wavelets --------------------------------------------------------

struct Cdf97Params {
    double alpha;
    double beta;
    double gamma;
    double delta;
    double zeta;
};

Cdf97Params cdf97_step_params();
/// CDF 5/3: one step, P taps 1/2 at (0, +1), U taps 1/4 at (-1, 0).
LiftingScheme cdf53_scheme();
/// CDF 9/7: two predict/update pairs plus scaling by zeta, 1/zeta.
LiftingScheme cdf97_scheme();

/// Two-step learned scheme. Step 1 starts as CDF 5/3 (see
/// LiftNet::set_linear_filter), step 2 as the identity; affine maps start at
/// sigmoid(0) = 0.5 unless `affine` is identity.
LiftingScheme learned_scheme(int width, AffineMap::Kind affine, nn::Padding padding, nn::Rng& rng);

// ---- volume helpers --------------------------------------------------------

nn::Var to_var(const Volume& v);
Volume to_volume(const nn::Tensor& t, int bit_depth, bool is_signed);

/// Split a volume along `axis` into even/odd index sub-volumes. Throws
/// GeometryError for an odd axis length.
std::pair<Volume, Volume> split_volume(const Volume& v, int axis);
Volume merge_volume(const Volume& even, const Volume& odd, int axis);

} // namespace voxwave
