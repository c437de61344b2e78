#include "voxwave/entropy.hpp"

#include "voxwave/bytes.hpp"
#include "voxwave/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace voxwave {

namespace L = cumulative_layout;

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x)
{
    if (x >= 0)
        return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

// Derivatives of the reparameterizations, in the same layout as Cumulative.
struct Slopes {
    double h1[3], t1[3];
    double h[3][9], t[3][3];
    double h5[3];
};

Slopes slopes_from_raw(RawView raw)
{
    Slopes s;
    for (int i = 0; i < 3; ++i) {
        s.h1[i] = sigmoid(raw[L::h1 + i]);
        double t = std::tanh(raw[L::a1 + i]);
        s.t1[i] = 1.0 - t * t;
        s.h5[i] = sigmoid(raw[L::h5 + i]);
    }
    for (int k = 0; k < 3; ++k) {
        int base = L::layer(k + 2);
        for (int m = 0; m < 9; ++m)
            s.h[k][m] = sigmoid(raw[base + m]);
        for (int i = 0; i < 3; ++i) {
            double t = std::tanh(raw[base + 12 + i]);
            s.t[k][i] = 1.0 - t * t;
        }
    }
    return s;
}

// Forward values kept for the backward pass.
struct Trace {
    double v[4][3];
    double g[4][3];
};

double logit_traced(const Cumulative& c, double x, Trace& tr)
{
    for (int i = 0; i < 3; ++i) {
        double v = c.h1[i] * x + c.b1[i];
        tr.v[0][i] = v;
        tr.g[0][i] = v + c.t1[i] * std::tanh(v);
    }
    for (int k = 0; k < 3; ++k)
        for (int i = 0; i < 3; ++i) {
            double v = c.b[k][i];
            for (int m = 0; m < 3; ++m)
                v += c.h[k][3 * i + m] * tr.g[k][m];
            tr.v[k + 1][i] = v;
            tr.g[k + 1][i] = v + c.t[k][i] * std::tanh(v);
        }
    double out = c.b5;
    for (int i = 0; i < 3; ++i)
        out += c.h5[i] * tr.g[3][i];
    return out;
}

// Accumulates into a contiguous 58-vector; returns d/dx.
double logit_backward_traced(const Cumulative& c, const Slopes& s, const Trace& tr, double x, double gL,
                             double* graw)
{
    double gg[3];
    for (int i = 0; i < 3; ++i) {
        graw[L::h5 + i] += gL * tr.g[3][i] * s.h5[i];
        gg[i] = gL * c.h5[i];
    }
    graw[L::b5] += gL;
    for (int k = 2; k >= 0; --k) {
        const int base = L::layer(k + 2);
        double gprev[3] = {0.0, 0.0, 0.0};
        for (int i = 0; i < 3; ++i) {
            double th = std::tanh(tr.v[k + 1][i]);
            double gv = gg[i] * (1.0 + c.t[k][i] * (1.0 - th * th));
            graw[base + 12 + i] += gg[i] * th * s.t[k][i];
            graw[base + 9 + i] += gv;
            for (int m = 0; m < 3; ++m) {
                graw[base + 3 * i + m] += gv * tr.g[k][m] * s.h[k][3 * i + m];
                gprev[m] += gv * c.h[k][3 * i + m];
            }
        }
        std::copy(gprev, gprev + 3, gg);
    }
    double gx = 0.0;
    for (int i = 0; i < 3; ++i) {
        double th = std::tanh(tr.v[0][i]);
        double gv = gg[i] * (1.0 + c.t1[i] * (1.0 - th * th));
        graw[L::a1 + i] += gg[i] * th * s.t1[i];
        graw[L::b1 + i] += gv;
        graw[L::h1 + i] += gv * x * s.h1[i];
        gx += gv * c.h1[i];
    }
    return gx;
}

// sigma(hi) - sigma(lo) for lo <= hi, without cancellation in the upper tail.
double sigmoid_gap(double lo, double hi)
{
    if (lo + hi > 0)
        return sigmoid(-lo) - sigmoid(-hi);
    return sigmoid(hi) - sigmoid(lo);
}

} // namespace

Cumulative Cumulative::from_raw(RawView raw)
{
    Cumulative c;
    for (int i = 0; i < 3; ++i) {
        c.h1[i] = softplus(raw[L::h1 + i]);
        c.b1[i] = raw[L::b1 + i];
        c.t1[i] = std::tanh(raw[L::a1 + i]);
        c.h5[i] = softplus(raw[L::h5 + i]);
    }
    for (int k = 0; k < 3; ++k) {
        int base = L::layer(k + 2);
        for (int m = 0; m < 9; ++m)
            c.h[k][m] = softplus(raw[base + m]);
        for (int i = 0; i < 3; ++i) {
            c.b[k][i] = raw[base + 9 + i];
            c.t[k][i] = std::tanh(raw[base + 12 + i]);
        }
    }
    c.b5 = raw[L::b5];
    return c;
}

double Cumulative::logit(double x) const
{
    Trace tr;
    return logit_traced(*this, x, tr);
}

double Cumulative::cdf(double x) const { return sigmoid(logit(x)); }

RawParams init_raw(double median, double scale)
{
    if (!(scale > 0.0))
        throw ConfigError("cumulative model scale must be positive");
    // With gates off and equal weights h, L(x) = 81 h^5 (x - median).
    double h = std::pow(1.0 / (81.0 * scale), 0.2);
    double raw_h = h > 30.0 ? h : std::log(std::expm1(h));
    RawParams r{};
    for (int i = 0; i < 3; ++i) {
        r[L::h1 + i] = raw_h;
        r[L::b1 + i] = -h * median;
        r[L::h5 + i] = raw_h;
    }
    for (int k = 2; k <= 4; ++k)
        for (int m = 0; m < 9; ++m)
            r[L::layer(k) + m] = raw_h;
    for (auto& v : r)
        v = nn::to_storage_precision(v);
    return r;
}

double logit_backward(RawView raw, double x, double gL, double* graw, std::size_t gstride)
{
    Cumulative c = Cumulative::from_raw(raw);
    Slopes s = slopes_from_raw(raw);
    Trace tr;
    logit_traced(c, x, tr);
    double local[kCumulativeParams] = {};
    double gx = logit_backward_traced(c, s, tr, x, gL, local);
    for (int i = 0; i < kCumulativeParams; ++i)
        graw[std::size_t(i) * gstride] += local[i];
    return gx;
}

nn::Var interval_likelihood(const nn::Var& x, const nn::Var& psi, double half_width, double floor)
{
    const nn::Shape& xs = x.shape();
    const nn::Shape& ps = psi.shape();
    if (xs.c != 1 || ps.c != kCumulativeParams)
        throw ShapeError("interval_likelihood: x " + xs.str() + ", psi " + ps.str());
    const bool shared = ps.spatial() == 1;
    if (!shared && (ps.d != xs.d || ps.h != xs.h || ps.w != xs.w))
        throw ShapeError("interval_likelihood: psi " + ps.str() + " does not match x " + xs.str());
    const std::size_t n = xs.spatial();
    const std::size_t stride = shared ? 1 : n;

    nn::Tensor out(xs);
    std::unique_ptr<Cumulative> common;
    if (shared)
        common = std::make_unique<Cumulative>(Cumulative::from_raw(RawView{psi.value().data(), 1}));
    for (std::size_t i = 0; i < n; ++i) {
        Cumulative local;
        const Cumulative* c = common.get();
        if (!shared) {
            local = Cumulative::from_raw(RawView{psi.value().data() + i, stride});
            c = &local;
        }
        double lu = c->logit(x.value()[i] + half_width);
        double ll = c->logit(x.value()[i] - half_width);
        out[i] = std::max(sigmoid_gap(ll, lu), floor);
    }

    return nn::make_op(std::move(out), {x, psi}, [shared, n, stride, half_width, floor](nn::Node& self) {
        auto& px = *self.parents[0];
        auto& pp = *self.parents[1];
        const double* raw_all = pp.value.data();
        double shared_grad[kCumulativeParams] = {};
        std::unique_ptr<Cumulative> common;
        std::unique_ptr<Slopes> common_slopes;
        if (shared) {
            common = std::make_unique<Cumulative>(Cumulative::from_raw(RawView{raw_all, 1}));
            common_slopes = std::make_unique<Slopes>(slopes_from_raw(RawView{raw_all, 1}));
        }
        double* gx = px.requires_grad ? px.grad_buffer().data() : nullptr;
        double* gp = pp.requires_grad ? pp.grad_buffer().data() : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
            double g = self.grad[i];
            if (g == 0.0)
                continue;
            // The floor passes gradients that would raise the probability.
            if (self.value[i] <= floor && g > 0.0)
                continue;
            Cumulative lc;
            Slopes ls;
            const Cumulative* c = common.get();
            const Slopes* s = common_slopes.get();
            if (!shared) {
                lc = Cumulative::from_raw(RawView{raw_all + i, stride});
                ls = slopes_from_raw(RawView{raw_all + i, stride});
                c = &lc;
                s = &ls;
            }
            const double xv = px.value[i];
            Trace tu, tl;
            double lu = logit_traced(*c, xv + half_width, tu);
            double ll = logit_traced(*c, xv - half_width, tl);
            double sign = lu + ll > 0 ? -1.0 : 1.0;
            double su = sigmoid(sign * lu), sl = sigmoid(sign * ll);
            double gu = g * su * (1.0 - su);
            double gl = -g * sl * (1.0 - sl);
            double local[kCumulativeParams] = {};
            double* acc = shared ? shared_grad : local;
            double dx = logit_backward_traced(*c, *s, tu, xv + half_width, gu, acc) +
                        logit_backward_traced(*c, *s, tl, xv - half_width, gl, acc);
            if (gx)
                gx[i] += dx;
            if (gp && !shared)
                for (int k = 0; k < kCumulativeParams; ++k)
                    gp[i + std::size_t(k) * stride] += local[k];
        }
        if (gp && shared)
            for (int k = 0; k < kCumulativeParams; ++k)
                gp[k] += shared_grad[k];
    });
}

// ---- discrete PMFs ---------------------------------------------------------

int exp_golomb_bits(std::uint64_t v)
{
    int n = 0;
    for (std::uint64_t u = v + 1; u > 1; u >>= 1)
        ++n;
    return 2 * n + 1;
}

std::pair<std::size_t, std::uint64_t> DiscretePmf::locate(std::int64_t q) const
{
    if (q <= lo)
        return {0, std::uint64_t(lo - q)};
    if (q >= hi)
        return {size() - 1, std::uint64_t(q - hi)};
    return {std::size_t(q - lo), 0};
}

double DiscretePmf::cost_bits(std::int64_t q) const
{
    auto [idx, extra] = locate(q);
    double bits = -std::log2(probs[idx]);
    if (idx == 0 || idx == size() - 1)
        bits += exp_golomb_bits(extra);
    return bits;
}

std::uint64_t DiscretePmf::hash() const
{
    ByteWriter w;
    w.u64(std::uint64_t(lo));
    w.u64(std::uint64_t(hi));
    for (auto c : cum)
        w.u32(c);
    return fnv1a64(w.buffer());
}

std::vector<double> interval_masses(const Cumulative& c, double qs, std::int64_t lo, std::int64_t hi)
{
    if (lo > hi)
        throw UsageError("empty symbol range [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    if (hi - lo + 1 > kMaxSupport)
        throw UsageError("symbol range wider than " + std::to_string(kMaxSupport));
    const std::size_t n = std::size_t(hi - lo + 1);
    if (n == 1)
        return {1.0};
    std::vector<double> edge(n - 1);
    for (std::size_t j = 0; j + 1 < n; ++j)
        edge[j] = c.logit((double(lo + std::int64_t(j)) + 0.5) * qs);
    std::vector<double> p(n);
    p[0] = sigmoid(edge[0]);
    p[n - 1] = sigmoid(-edge[n - 2]);
    for (std::size_t j = 1; j + 1 < n; ++j)
        p[j] = std::max(0.0, sigmoid_gap(edge[j - 1], edge[j]));
    return p;
}

DiscretePmf discretize(const Cumulative& c, double qs, std::int64_t lo, std::int64_t hi)
{
    std::vector<double> p = interval_masses(c, qs, lo, hi);
    const std::size_t n = p.size();
    double total = 0.0;
    for (double v : p)
        total += std::isfinite(v) ? v : 0.0;

    DiscretePmf pmf;
    pmf.lo = lo;
    pmf.hi = hi;
    pmf.probs.resize(n);
    const double spare = 1.0 - double(n) * kProbFloor;
    for (std::size_t i = 0; i < n; ++i) {
        double share = total > 0.0 && std::isfinite(p[i]) ? p[i] / total : 1.0 / double(n);
        pmf.probs[i] = kProbFloor + spare * share;
    }

    std::vector<std::int64_t> freq(n);
    std::int64_t sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
        freq[i] = std::max<std::int64_t>(1, std::llround(pmf.probs[i] * double(kFreqTotal)));
        sum += freq[i];
    }
    // Settle the rounding residue on the most probable symbols.
    while (sum != std::int64_t(kFreqTotal)) {
        std::size_t top = std::size_t(std::max_element(freq.begin(), freq.end()) - freq.begin());
        if (sum < std::int64_t(kFreqTotal)) {
            freq[top] += std::int64_t(kFreqTotal) - sum;
            sum = kFreqTotal;
        } else {
            std::int64_t take = std::min(sum - std::int64_t(kFreqTotal), freq[top] - 1);
            if (take <= 0)
                throw UsageError("support too wide for 16-bit frequencies");
            freq[top] -= take;
            sum -= take;
        }
    }
    pmf.cum.resize(n + 1);
    pmf.cum[0] = 0;
    for (std::size_t i = 0; i < n; ++i)
        pmf.cum[i + 1] = pmf.cum[i] + std::uint32_t(freq[i]);
    return pmf;
}

std::pair<std::int64_t, std::int64_t> choose_support(const Cumulative& c, double qs)
{
    // Each boundary symbol may hold at most tau of tail mass.
    constexpr double tau = 1.0 / 131072.0;
    const double lt = std::log(tau / (1.0 - tau));
    constexpr std::int64_t limit = std::int64_t(1) << 40;
    auto upper = [&](std::int64_t q) { return c.logit((double(q) + 0.5) * qs); };
    auto lower = [&](std::int64_t q) { return c.logit((double(q) - 0.5) * qs); };

    // Largest q with upper(q) <= lt.
    std::int64_t a = -1, b = 0;
    for (std::int64_t step = 1; !(upper(a) <= lt) && step < limit; step *= 2)
        b = a, a -= step;
    for (std::int64_t step = 1; upper(b) <= lt && step < limit; step *= 2)
        a = b, b += step;
    while (b - a > 1) {
        std::int64_t m = a + (b - a) / 2;
        (upper(m) <= lt ? a : b) = m;
    }
    std::int64_t lo = a;

    // Smallest q with lower(q) >= -lt.
    a = 0, b = 1;
    for (std::int64_t step = 1; !(lower(b) >= -lt) && step < limit; step *= 2)
        a = b, b += step;
    for (std::int64_t step = 1; lower(a) >= -lt && step < limit; step *= 2)
        b = a, a -= step;
    while (b - a > 1) {
        std::int64_t m = a + (b - a) / 2;
        (lower(m) >= -lt ? b : a) = m;
    }
    std::int64_t hi = b;

    if (hi <= lo)
        hi = lo + 1;
    if (hi - lo + 1 > kMaxSupport) {
        // Keep the window around the median.
        std::int64_t ma = lo, mb = hi;
        while (mb - ma > 1) {
            std::int64_t m = ma + (mb - ma) / 2;
            (upper(m) >= 0.0 ? mb : ma) = m;
        }
        lo = std::max(lo, mb - kMaxSupport / 2);
        hi = lo + kMaxSupport - 1;
    }
    return {lo, hi};
}

DiscretePmf discretize(const Cumulative& c, double qs)
{
    auto [lo, hi] = choose_support(c, qs);
    return discretize(c, qs, lo, hi);
}

double subband_rate(const nn::Tensor& q, const DiscretePmf& pmf)
{
    double bits = 0.0;
    for (double v : q.span())
        bits += pmf.cost_bits(std::llround(v));
    return bits;
}

// ---- factorized model --------------------------------------------------------

std::pair<double, double> robust_location_scale(std::vector<double> values)
{
    if (values.empty())
        return {0.0, 1.0};
    auto mid = values.begin() + std::ptrdiff_t(values.size() / 2);
    std::nth_element(values.begin(), mid, values.end());
    double median = *mid;
    double mad = 0.0;
    for (double v : values)
        mad += std::abs(v - median);
    mad /= double(values.size());
    // Mean absolute deviation of a logistic is 2 ln 2 times its scale.
    double scale = std::max(mad / (2.0 * std::log(2.0)), 0.05);
    return {median, scale};
}

FactorizedModel FactorizedModel::create(int levels)
{
    FactorizedModel m;
    RawParams r = init_raw(0.0, 1.0);
    for (std::size_t i = 0; i < SubbandSet::band_count(levels); ++i)
        m.bands.emplace_back(nn::Tensor(nn::Shape{kCumulativeParams, 1, 1, 1}, std::vector<double>(r.begin(), r.end())),
                             true);
    return m;
}

namespace {

void init_bands_from_data(std::vector<nn::Var>& bands, const std::vector<SubbandSet>& samples)
{
    for (std::size_t pos = 0; pos < bands.size(); ++pos) {
        std::vector<double> values;
        for (const auto& s : samples) {
            if (pos >= s.bands.size())
                throw ShapeError("sample subband set has fewer bands than the model");
            const auto& v = s.bands[pos].value().vec();
            values.insert(values.end(), v.begin(), v.end());
        }
        auto [median, scale] = robust_location_scale(std::move(values));
        RawParams r = init_raw(median, scale);
        std::copy(r.begin(), r.end(), bands[pos].mutable_value().data());
    }
}

} // namespace

void FactorizedModel::init_from_data(const std::vector<SubbandSet>& samples)
{
    init_bands_from_data(bands, samples);
}

void FactorizedModel::append_params(const std::string& prefix, std::vector<nn::NamedParam>& out) const
{
    for (std::size_t i = 0; i < bands.size(); ++i)
        out.push_back({prefix + "/band" + std::to_string(i), bands[i]});
}

// ---- context model -----------------------------------------------------------

ContextModel ContextModel::create(int levels, int width, nn::Rng& rng)
{
    using nn::ConvLayer;
    using nn::MaskType;
    using nn::Padding;
    ContextModel m;
    m.width = width;
    m.extract = ConvLayer::create(kContextInputs, width, 3, Padding::zero, MaskType::none, rng);
    m.between1 = nn::ResidualBlock::create(width, Padding::zero, rng);
    m.between2 = nn::ResidualBlock::create(width, Padding::zero, rng);
    m.within_a = ConvLayer::create(width + 1, width, 3, Padding::zero, MaskType::type_a, rng);
    m.within_b = ConvLayer::create(width, width, 3, Padding::zero, MaskType::type_b, rng);
    m.merge1 = ConvLayer::create(2 * width, 2 * width, 1, Padding::zero, MaskType::none, rng);
    m.merge2 = ConvLayer::create(2 * width, kCumulativeParams, 1, Padding::zero, MaskType::none, rng);
    // Start as the per-band base model; training grows the context offset.
    m.merge2.weight.mutable_value().fill(0.0);
    m.merge2.bias.mutable_value().fill(0.0);
    RawParams r = init_raw(0.0, 1.0);
    for (std::size_t i = 0; i < SubbandSet::band_count(levels); ++i)
        m.base.emplace_back(nn::Tensor(nn::Shape{kCumulativeParams, 1, 1, 1}, std::vector<double>(r.begin(), r.end())),
                            true);
    return m;
}

nn::Var ContextModel::band_input_var(const SubbandSet& coded, std::size_t pos, const Transform& t,
                                     const LiftContext& ctx, double value_scale) const
{
    BandId id = SubbandSet::id_at(coded.levels, pos);
    Dims bd = SubbandSet::band_dims(coded.block_dims, id.level);
    const nn::Shape one{1, bd.d, bd.h, bd.w};
    auto slot = [&](int j, const nn::Var& v) {
        if (v.shape() != one)
            throw FormatError("context band " + std::to_string(j) + " has shape " + v.shape().str() + ", expected " +
                              one.str());
        return nn::scale(v, value_scale);
    };
    std::vector<nn::Var> parts;
    if (id.index > 0) {
        for (std::size_t p = 0; p < pos; ++p)
            if (!coded.bands[p].defined())
                throw FormatError("band " + SubbandSet::id_at(coded.levels, p).label() +
                                  " is needed as context but has not been coded");
        parts.push_back(slot(0, t.reconstruct_low(coded, id.level, ctx)));
        for (int j = 1; j < id.index; ++j)
            parts.push_back(slot(j, coded.band({id.level, j})));
    }
    const int used = int(parts.size());
    if (used < 8)
        parts.push_back(nn::Var(nn::Tensor(nn::Shape{8 - used, bd.d, bd.h, bd.w}, 0.0)));
    nn::Tensor onehot(nn::Shape{8, bd.d, bd.h, bd.w}, 0.0);
    const std::size_t sp = one.spatial();
    std::fill(onehot.data() + std::size_t(id.index) * sp, onehot.data() + std::size_t(id.index + 1) * sp, 1.0);
    parts.push_back(nn::Var(std::move(onehot)));
    return nn::concat_channels(parts);
}

nn::Tensor ContextModel::band_input(const SubbandSet& coded, std::size_t pos, const Transform& t,
                                    const LiftContext& ctx, double value_scale) const
{
    nn::NoGradGuard ng;
    return band_input_var(coded, pos, t, ctx, value_scale).value();
}

nn::Var ContextModel::psi(const nn::Var& input, const nn::Var& current_scaled, std::size_t pos) const
{
    nn::Var ct = nn::conv3d(input, extract);
    nn::Var cb = between2.forward(between1.forward(ct));
    nn::Var a = nn::relu(nn::conv3d(nn::concat_channels({ct, current_scaled}), within_a));
    nn::Var cw = nn::relu(nn::conv3d(a, within_b));
    nn::Var m = nn::relu(nn::conv3d(nn::concat_channels({cb, cw}), merge1));
    return nn::add_channel_bias(nn::conv3d(m, merge2), base.at(pos));
}

ContextCursor ContextModel::cursor(const nn::Tensor& input, std::size_t pos, double value_scale) const
{
    return ContextCursor(*this, input, pos, value_scale);
}

void ContextModel::append_params(const std::string& prefix, std::vector<nn::NamedParam>& out) const
{
    extract.append_params(prefix + "/extract", out);
    between1.append_params(prefix + "/between1", out);
    between2.append_params(prefix + "/between2", out);
    within_a.append_params(prefix + "/within_a", out);
    within_b.append_params(prefix + "/within_b", out);
    merge1.append_params(prefix + "/merge1", out);
    merge2.append_params(prefix + "/merge2", out);
    for (std::size_t i = 0; i < base.size(); ++i)
        out.push_back({prefix + "/base" + std::to_string(i), base[i]});
}

std::size_t ContextModel::parameter_count() const
{
    return extract.parameter_count() + between1.parameter_count() + between2.parameter_count() +
           within_a.parameter_count() + within_b.parameter_count() + merge1.parameter_count() +
           merge2.parameter_count() + base.size() * kCumulativeParams;
}

// ---- cursor ----------------------------------------------------------------

ContextCursor::ContextCursor(const ContextModel& m, const nn::Tensor& input, std::size_t pos, double value_scale)
    : m_(m), pos_(pos), scale_(value_scale)
{
    const nn::Shape& is = input.shape();
    if (is.c != kContextInputs)
        throw ShapeError("context input needs 16 channels, got " + is.str());
    s_ = nn::Shape{1, is.d, is.h, is.w};
    nn::NoGradGuard ng;
    nn::Var ct = nn::conv3d(nn::Var(input), m.extract);
    cb_ = m.between2.forward(m.between1.forward(ct)).value();

    const int C = m.width;
    const std::size_t padded_size = std::size_t(s_.d + 2) * (s_.h + 2) * (s_.w + 2);
    ct_.assign(std::size_t(C) * padded_size, 0.0);
    cur_.assign(padded_size, 0.0);
    feat_a_.assign(std::size_t(C) * padded_size, 0.0);
    hidden_.resize(std::size_t(4 * C));
    for (int c = 0; c < C; ++c)
        for (int z = 0; z < s_.d; ++z)
            for (int y = 0; y < s_.h; ++y)
                for (int x = 0; x < s_.w; ++x)
                    ct_[pidx(c, z + 1, y + 1, x + 1)] = ct.value().at(c, z, y, x);
}

std::size_t ContextCursor::pidx(int c, int z, int y, int x) const
{
    return ((std::size_t(c) * (s_.d + 2) + z) * (s_.h + 2) + y) * (s_.w + 2) + x;
}

void ContextCursor::psi_at(int z, int y, int x, double* out)
{
    const int C = m_.width;
    // Masked layer A at p reads only raster-earlier voxels.
    const auto& la = m_.within_a;
    for (int co = 0; co < C; ++co) {
        double acc = la.bias.value()[co];
        for (int ci = 0; ci <= C; ++ci)
            for (int t = 0; t < 13; ++t) {
                const int kz = t / 9, ky = (t / 3) % 3, kx = t % 3;
                double v = ci < C ? ct_[pidx(ci, z + kz, y + ky, x + kx)] : cur_[pidx(0, z + kz, y + ky, x + kx)];
                acc += la.w(co, ci, t) * v;
            }
        feat_a_[pidx(co, z + 1, y + 1, x + 1)] = acc > 0.0 ? acc : 0.0;
    }
    // Layer B sees A up to and including p.
    const auto& lb = m_.within_b;
    double* merged = hidden_.data();
    const std::size_t sp = s_.spatial();
    const std::size_t at = (std::size_t(z) * s_.h + y) * s_.w + x;
    for (int c = 0; c < C; ++c)
        merged[c] = cb_[std::size_t(c) * sp + at];
    for (int co = 0; co < C; ++co) {
        double acc = lb.bias.value()[co];
        for (int ci = 0; ci < C; ++ci)
            for (int t = 0; t <= 13; ++t) {
                const int kz = t / 9, ky = (t / 3) % 3, kx = t % 3;
                acc += lb.w(co, ci, t) * feat_a_[pidx(ci, z + kz, y + ky, x + kx)];
            }
        merged[C + co] = acc > 0.0 ? acc : 0.0;
    }
    double* h = hidden_.data() + 2 * C;
    const auto& m1 = m_.merge1;
    for (int co = 0; co < 2 * C; ++co) {
        double acc = m1.bias.value()[co];
        for (int ci = 0; ci < 2 * C; ++ci)
            acc += m1.w(co, ci, 0) * merged[ci];
        h[co] = acc > 0.0 ? acc : 0.0;
    }
    const auto& m2 = m_.merge2;
    const auto& base = m_.base.at(pos_).value();
    for (int co = 0; co < kCumulativeParams; ++co) {
        double acc = m2.bias.value()[co];
        for (int ci = 0; ci < 2 * C; ++ci)
            acc += m2.w(co, ci, 0) * h[ci];
        out[co] = acc + base[co];
    }
}

void ContextCursor::commit(int z, int y, int x, double value)
{
    cur_[pidx(0, z + 1, y + 1, x + 1)] = value * scale_;
}

} // namespace voxwave
