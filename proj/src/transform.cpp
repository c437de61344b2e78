#include "voxwave/transform.hpp"

#include "voxwave/errors.hpp"

namespace voxwave {

using nn::Var;

std::string to_string(SharingMode m)
{
    switch (m) {
    case SharingMode::share_all:
        return "all";
    case SharingMode::share_xy:
        return "xy";
    case SharingMode::share_xz:
        return "xz";
    case SharingMode::share_yz:
        return "yz";
    case SharingMode::share_none:
        return "none";
    }
    return "?";
}

std::string to_string(AffineGranularity g) { return g == AffineGranularity::fine ? "fine" : "coarse"; }

std::string to_string(TransformKind k)
{
    switch (k) {
    case TransformKind::cdf53:
        return "cdf53";
    case TransformKind::cdf97:
        return "cdf97";
    case TransformKind::learned:
        return "learned";
    }
    return "?";
}

SharingMode parse_sharing(const std::string& s)
{
    for (auto m : {SharingMode::share_all, SharingMode::share_xy, SharingMode::share_xz, SharingMode::share_yz,
                   SharingMode::share_none})
        if (s == to_string(m) || s == "share_" + to_string(m))
            return m;
    throw ConfigError("unknown sharing mode '" + s + "' (all, xy, xz, yz, none)");
}

AffineGranularity parse_granularity(const std::string& s)
{
    if (s == "fine")
        return AffineGranularity::fine;
    if (s == "coarse")
        return AffineGranularity::coarse;
    throw ConfigError("unknown affine granularity '" + s + "' (fine, coarse)");
}

TransformKind parse_transform_kind(const std::string& s)
{
    for (auto k : {TransformKind::cdf53, TransformKind::cdf97, TransformKind::learned})
        if (s == to_string(k))
            return k;
    throw ConfigError("unknown transform '" + s + "' (cdf53, cdf97, learned)");
}

// ---- sharing ---------------------------------------------------------------

int SharingPolicy::set_count() const
{
    switch (mode) {
    case SharingMode::share_all:
        return 1;
    case SharingMode::share_none:
        return 3;
    default:
        return 2;
    }
}

int SharingPolicy::set_for_axis(int axis) const
{
    // Set 0 is the axis that stands alone; set 1 the shared pair.
    switch (mode) {
    case SharingMode::share_all:
        return 0;
    case SharingMode::share_none:
        return axis;
    case SharingMode::share_xy:
        return axis == 0 ? 0 : 1;
    case SharingMode::share_xz:
        return axis == 1 ? 0 : 1;
    case SharingMode::share_yz:
        return axis == 2 ? 0 : 1;
    }
    return 0;
}

std::size_t parameter_count(const SharingPolicy& policy, AffineGranularity granularity, int width,
                            bool include_affine)
{
    const std::size_t w = std::size_t(width);
    const std::size_t net = (27 * w + w) + (27 * w * w + w) + (27 * w + 1);
    std::size_t affine = 0;
    if (include_affine)
        affine = granularity == AffineGranularity::fine ? 2 * net : 2;
    const std::size_t per_step = 2 * net + affine;
    return std::size_t(policy.set_count()) * 2 * per_step;
}

// ---- band bookkeeping ------------------------------------------------------

std::string BandId::label() const
{
    std::string s;
    for (int a = 0; a < 3; ++a)
        s += (index >> a) & 1 ? 'H' : 'L';
    return s + std::to_string(level);
}

BandId SubbandSet::id_at(int levels, std::size_t position)
{
    if (position == 0)
        return {levels, 0};
    std::size_t p = position - 1;
    return {levels - int(p / 7), int(p % 7) + 1};
}

std::size_t SubbandSet::position_of(int levels, BandId id)
{
    if (id.index == 0) {
        if (id.level != levels)
            throw UsageError("only the deepest level stores an LLL band");
        return 0;
    }
    return 1 + std::size_t(levels - id.level) * 7 + std::size_t(id.index - 1);
}

Dims SubbandSet::band_dims(Dims block, int level)
{
    return {block.d >> level, block.h >> level, block.w >> level};
}

std::size_t SubbandSet::sample_count() const
{
    std::size_t n = 0;
    for (const auto& b : bands)
        if (b.defined())
            n += b.value().size();
    return n;
}

// ---- Transform -------------------------------------------------------------

Transform Transform::create(const TransformConfig& cfg, nn::Rng& rng)
{
    if (cfg.levels < 1)
        throw ConfigError("decomposition needs at least one level");
    if (cfg.kind == TransformKind::cdf97 && cfg.lossless)
        throw ConfigError("CDF 9/7 is irreversible in integer arithmetic; use cdf53 or learned for lossless");
    Transform t;
    t.cfg_ = cfg;
    int sets = cfg.sharing.set_count();
    for (int k = 0; k < sets; ++k) {
        switch (cfg.kind) {
        case TransformKind::cdf53:
            t.sets_.push_back(cdf53_scheme());
            break;
        case TransformKind::cdf97:
            t.sets_.push_back(cdf97_scheme());
            break;
        case TransformKind::learned: {
            auto affine = cfg.lossless                                    ? AffineMap::Kind::identity
                          : cfg.granularity == AffineGranularity::coarse ? AffineMap::Kind::scalar
                                                                         : AffineMap::Kind::network;
            t.sets_.push_back(learned_scheme(cfg.width, affine, nn::Padding::replicate, rng));
            break;
        }
        }
    }
    return t;
}

LiftContext Transform::context(int bit_depth) const
{
    LiftContext ctx;
    ctx.mode = cfg_.lossless ? LiftMode::integer_lossless : LiftMode::float_lossy;
    ctx.input_scale = std::ldexp(1.0, -bit_depth);
    return ctx;
}

const LiftingScheme& Transform::scheme_for_axis(int axis) const
{
    return sets_.at(std::size_t(cfg_.sharing.set_for_axis(axis)));
}

std::array<Var, 8> Transform::forward_level(const Var& x, const LiftContext& ctx) const
{
    std::array<Var, 8> parts;
    parts[0] = x;
    for (int axis = 0; axis < 3; ++axis) {
        int span = 1 << axis; // parts[0..span) are populated
        for (int i = 0; i < span; ++i) {
            LiftedPair p = scheme_forward_axis(parts[i], axis, scheme_for_axis(axis), ctx);
            parts[i] = p.low;
            parts[i | span] = p.high;
        }
    }
    return parts;
}

Var Transform::inverse_level(const std::array<Var, 8>& bands, const LiftContext& ctx) const
{
    std::array<Var, 8> parts = bands;
    for (int axis = 2; axis >= 0; --axis) {
        int span = 1 << axis;
        for (int i = 0; i < span; ++i)
            parts[i] = scheme_inverse_axis({parts[i], parts[i | span]}, axis, scheme_for_axis(axis), ctx);
    }
    return parts[0];
}

SubbandSet Transform::forward(const Var& block, const LiftContext& ctx) const
{
    const auto& s = block.shape();
    int unit = 1 << cfg_.levels;
    if (s.d % unit || s.h % unit || s.w % unit)
        throw GeometryError("block " + s.str() + " is not divisible by 2^" + std::to_string(cfg_.levels));
    SubbandSet out;
    out.levels = cfg_.levels;
    out.block_dims = {s.d, s.h, s.w};
    out.bands.resize(SubbandSet::band_count(cfg_.levels));
    Var cur = block;
    for (int level = 1; level <= cfg_.levels; ++level) {
        auto parts = forward_level(cur, ctx);
        for (int i = 1; i < 8; ++i)
            out.band({level, i}) = parts[i];
        cur = parts[0];
    }
    out.band({cfg_.levels, 0}) = cur;
    return out;
}

Var Transform::reconstruct_low(const SubbandSet& s, int level, const LiftContext& ctx) const
{
    Var low = s.band({s.levels, 0});
    for (int k = s.levels; k > level; --k) {
        std::array<Var, 8> parts;
        parts[0] = low;
        for (int i = 1; i < 8; ++i)
            parts[i] = s.band({k, i});
        low = inverse_level(parts, ctx);
    }
    return low;
}

Var Transform::inverse(const SubbandSet& s, const LiftContext& ctx) const
{
    if (s.levels != cfg_.levels || s.bands.size() != SubbandSet::band_count(s.levels))
        throw FormatError("subband set has " + std::to_string(s.bands.size()) + " bands, expected " +
                          std::to_string(SubbandSet::band_count(cfg_.levels)));
    for (std::size_t p = 0; p < s.bands.size(); ++p) {
        BandId id = SubbandSet::id_at(s.levels, p);
        if (!s.bands[p].defined())
            throw FormatError("missing band " + id.label());
        Dims want = SubbandSet::band_dims(s.block_dims, id.level);
        const auto& sh = s.bands[p].shape();
        if (sh.c != 1 || sh.d != want.d || sh.h != want.h || sh.w != want.w)
            throw FormatError("band " + id.label() + " has shape " + sh.str());
    }
    return reconstruct_low(s, 0, ctx);
}

void Transform::append_params(std::vector<nn::NamedParam>& out) const
{
    if (cfg_.kind != TransformKind::learned)
        return;
    for (std::size_t k = 0; k < sets_.size(); ++k)
        for (std::size_t i = 0; i < sets_[k].steps.size(); ++i) {
            const auto& step = sets_[k].steps[i];
            std::string pre = "transform/set" + std::to_string(k) + "/step" + std::to_string(i);
            std::get<nn::LiftNet>(step.predictor).append_params(pre + "/P", out);
            std::get<nn::LiftNet>(step.updater).append_params(pre + "/U", out);
            for (auto [name, map] : {std::pair{"/A", &step.affine_a}, std::pair{"/B", &step.affine_b}}) {
                if (map->kind == AffineMap::Kind::scalar)
                    out.push_back({pre + name + "/scalar", map->raw_scalar});
                else if (map->kind == AffineMap::Kind::network)
                    map->net.append_params(pre + name, out);
            }
        }
}

std::size_t Transform::trainable_parameter_count() const
{
    std::vector<nn::NamedParam> ps;
    append_params(ps);
    std::size_t n = 0;
    for (const auto& p : ps)
        n += p.var.value().size();
    return n;
}

SubbandSet forward_3d(const Volume& v, const Transform& t)
{
    nn::NoGradGuard ng;
    return t.forward(to_var(v), t.context(v.bit_depth));
}

Volume inverse_3d(const SubbandSet& s, const Transform& t, int bit_depth, bool is_signed)
{
    nn::NoGradGuard ng;
    return to_volume(t.inverse(s, t.context(bit_depth)).value(), bit_depth, is_signed);
}

} // namespace voxwave
