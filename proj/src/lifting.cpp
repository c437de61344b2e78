#include "voxwave/lifting.hpp"

#include "voxwave/errors.hpp"

namespace voxwave {

using nn::Var;

namespace {

Var checked(Var v, const char* what)
{
    if (!v.value().all_finite())
        throw NumericError(std::string(what) + " produced a non-finite value");
    return v;
}

Var constant_one() { return Var(nn::Tensor::scalar(1.0)); }

} // namespace

AffineMap AffineMap::coarse(double raw)
{
    AffineMap a;
    a.kind = Kind::scalar;
    a.raw_scalar = Var(nn::Tensor::scalar(raw), true);
    return a;
}

AffineMap AffineMap::fine(int width, nn::Rng& rng)
{
    AffineMap a;
    a.kind = Kind::network;
    a.net = nn::LiftNet::create(width, nn::Padding::replicate, rng);
    a.net.zero_output();
    return a;
}

AxisSplit split(const Var& x)
{
    if (x.shape().d % 2 != 0)
        throw GeometryError("cannot split odd length " + std::to_string(x.shape().d) + "; pad first");
    return {nn::take_parity(x, 0), nn::take_parity(x, 1)};
}

Var merge(const AxisSplit& s) { return nn::merge_parity(s.even, s.odd); }

Var apply_filter(const LiftFilter& f, const Var& x, const LiftContext& ctx)
{
    if (const auto* fixed = std::get_if<FixedTaps>(&f)) {
        Var out;
        for (std::size_t k = 0; k < fixed->taps.size(); ++k) {
            Var term = nn::scale(nn::shift_replicate(x, fixed->offsets[k]), fixed->taps[k]);
            out = out.defined() ? nn::add(out, term) : term;
        }
        return out.defined() ? out : nn::scale(x, 0.0);
    }
    const auto& net = std::get<nn::LiftNet>(f);
    Var y = net.forward(nn::scale(x, ctx.input_scale));
    return checked(nn::scale(y, 1.0 / ctx.input_scale), "lifting network");
}

Var apply_affine(const AffineMap& a, const Var& x, const LiftContext& ctx)
{
    switch (a.kind) {
    case AffineMap::Kind::identity:
        return constant_one();
    case AffineMap::Kind::scalar:
        return nn::clamp_min(nn::sigmoid(a.raw_scalar), kAffineFloor);
    case AffineMap::Kind::network:
        break;
    }
    Var logits = checked(a.net.forward(nn::scale(x, ctx.input_scale)), "affine network");
    return nn::clamp_min(nn::sigmoid(logits), kAffineFloor);
}

LiftedPair lift_forward(const AxisSplit& s, const LiftingStep& step, const LiftContext& ctx)
{
    Var pred = apply_filter(step.predictor, s.even, ctx);
    if (ctx.mode == LiftMode::integer_lossless) {
        Var high = nn::sub(s.odd, nn::round_ste(pred));
        Var low = nn::add(s.even, nn::round_ste(apply_filter(step.updater, high, ctx)));
        return {low, high};
    }
    Var high = nn::mul(nn::sub(s.odd, pred), apply_affine(step.affine_a, s.even, ctx));
    Var upd = apply_filter(step.updater, high, ctx);
    Var low = nn::mul(nn::add(s.even, upd), apply_affine(step.affine_b, high, ctx));
    return {low, high};
}

AxisSplit lift_inverse(const LiftedPair& p, const LiftingStep& step, const LiftContext& ctx)
{
    if (ctx.mode == LiftMode::integer_lossless) {
        Var even = nn::sub(p.low, nn::round_ste(apply_filter(step.updater, p.high, ctx)));
        Var odd = nn::add(p.high, nn::round_ste(apply_filter(step.predictor, even, ctx)));
        return {even, odd};
    }
    Var even = nn::sub(nn::div(p.low, apply_affine(step.affine_b, p.high, ctx)),
                       apply_filter(step.updater, p.high, ctx));
    Var odd = nn::add(nn::div(p.high, apply_affine(step.affine_a, even, ctx)),
                      apply_filter(step.predictor, even, ctx));
    return {even, odd};
}

LiftedPair scheme_forward(const Var& x, const LiftingScheme& scheme, const LiftContext& ctx)
{
    AxisSplit s = split(x);
    LiftedPair p{s.even, s.odd};
    for (const auto& step : scheme.steps) {
        p = lift_forward(s, step, ctx);
        s = {p.low, p.high};
    }
    if (scheme.low_gain != 1.0)
        p.low = nn::scale(p.low, scheme.low_gain);
    if (scheme.high_gain != 1.0)
        p.high = nn::scale(p.high, scheme.high_gain);
    return p;
}

Var scheme_inverse(const LiftedPair& pair, const LiftingScheme& scheme, const LiftContext& ctx)
{
    LiftedPair p = pair;
    if (scheme.low_gain != 1.0)
        p.low = nn::scale(p.low, 1.0 / scheme.low_gain);
    if (scheme.high_gain != 1.0)
        p.high = nn::scale(p.high, 1.0 / scheme.high_gain);
    for (auto it = scheme.steps.rbegin(); it != scheme.steps.rend(); ++it) {
        AxisSplit s = lift_inverse(p, *it, ctx);
        p = {s.even, s.odd};
    }
    return merge({p.low, p.high});
}

LiftedPair scheme_forward_axis(const Var& x, int axis, const LiftingScheme& scheme, const LiftContext& ctx)
{
    if (axis == 0)
        return scheme_forward(x, scheme, ctx);
    LiftedPair p = scheme_forward(nn::swap_axes(x, 0, axis), scheme, ctx);
    return {nn::swap_axes(p.low, 0, axis), nn::swap_axes(p.high, 0, axis)};
}

Var scheme_inverse_axis(const LiftedPair& p, int axis, const LiftingScheme& scheme, const LiftContext& ctx)
{
    if (axis == 0)
        return scheme_inverse(p, scheme, ctx);
    LiftedPair c{nn::swap_axes(p.low, 0, axis), nn::swap_axes(p.high, 0, axis)};
    return nn::swap_axes(scheme_inverse(c, scheme, ctx), 0, axis);
}

// ---- fixed wavelets --------------------------------------------------------

Cdf97Params cdf97_step_params()
{
    return {-1.586134342059924, -0.052980118572961, 0.882911075530934, 0.443506852043971, 1.149604398860241};
}

LiftingScheme cdf53_scheme()
{
    LiftingScheme s;
    s.steps.push_back({FixedTaps{{0, 1}, {0.5, 0.5}}, FixedTaps{{-1, 0}, {0.25, 0.25}}, {}, {}});
    return s;
}

LiftingScheme cdf97_scheme()
{
    auto p = cdf97_step_params();
    LiftingScheme s;
    // h = x_o - P(x_e) with P = -alpha * (x_e[m] + x_e[m+1]); l = x_e + U(h).
    s.steps.push_back({FixedTaps{{0, 1}, {-p.alpha, -p.alpha}}, FixedTaps{{-1, 0}, {p.beta, p.beta}}, {}, {}});
    s.steps.push_back({FixedTaps{{0, 1}, {-p.gamma, -p.gamma}}, FixedTaps{{-1, 0}, {p.delta, p.delta}}, {}, {}});
    s.low_gain = p.zeta;
    s.high_gain = 1.0 / p.zeta;
    return s;
}

LiftingScheme learned_scheme(int width, AffineMap::Kind affine, nn::Padding padding, nn::Rng& rng)
{
    LiftingScheme s;
    for (int i = 0; i < 2; ++i) {
        LiftingStep step;
        auto p = nn::LiftNet::create(width, padding, rng);
        auto u = nn::LiftNet::create(width, padding, rng);
        if (i == 0) {
            p.set_linear_filter({0, 1}, {0.5, 0.5});
            u.set_linear_filter({-1, 0}, {0.25, 0.25});
        } else {
            p.zero_output();
            u.zero_output();
        }
        step.predictor = std::move(p);
        step.updater = std::move(u);
        switch (affine) {
        case AffineMap::Kind::identity:
            break;
        case AffineMap::Kind::scalar:
            step.affine_a = AffineMap::coarse();
            step.affine_b = AffineMap::coarse();
            break;
        case AffineMap::Kind::network:
            step.affine_a = AffineMap::fine(width, rng);
            step.affine_b = AffineMap::fine(width, rng);
            break;
        }
        s.steps.push_back(std::move(step));
    }
    return s;
}

// ---- volume helpers --------------------------------------------------------

Var to_var(const Volume& v)
{
    return Var(nn::Tensor(nn::Shape{1, v.dims.d, v.dims.h, v.dims.w}, v.data));
}

Volume to_volume(const nn::Tensor& t, int bit_depth, bool is_signed)
{
    const auto& s = t.shape();
    if (s.c != 1)
        throw ShapeError("to_volume needs a single-channel tensor, got " + s.str());
    Volume v(Dims{s.d, s.h, s.w}, bit_depth, is_signed);
    v.data = t.vec();
    return v;
}

std::pair<Volume, Volume> split_volume(const Volume& v, int axis)
{
    if (v.dims[axis] % 2 != 0)
        throw GeometryError("cannot split odd length " + std::to_string(v.dims[axis]) + " along axis " +
                            std::to_string(axis));
    nn::NoGradGuard ng;
    Var x = nn::swap_axes(to_var(v), 0, axis);
    AxisSplit s = split(x);
    return {to_volume(nn::swap_axes(s.even, 0, axis).value(), v.bit_depth, v.is_signed),
            to_volume(nn::swap_axes(s.odd, 0, axis).value(), v.bit_depth, v.is_signed)};
}

Volume merge_volume(const Volume& even, const Volume& odd, int axis)
{
    nn::NoGradGuard ng;
    Var e = nn::swap_axes(to_var(even), 0, axis);
    Var o = nn::swap_axes(to_var(odd), 0, axis);
    return to_volume(nn::swap_axes(merge({e, o}), 0, axis).value(), even.bit_depth, even.is_signed);
}

} // namespace voxwave
