#include "voxwave/quantizer.hpp"

#include "voxwave/errors.hpp"

#include <cmath>

namespace voxwave {

void QuantConfig::validate() const
{
    if (!(qs > 0.0) || !std::isfinite(qs))
        throw ConfigError("quantization step must be positive, got " + std::to_string(qs));
}

double quantize_value(double y, double qs) { return std::round(y / qs); }

nn::Tensor quantize(const nn::Tensor& y, const QuantConfig& cfg)
{
    cfg.validate();
    nn::Tensor q(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i)
        q[i] = quantize_value(y[i], cfg.qs);
    return q;
}

nn::Tensor dequantize(const nn::Tensor& q, const QuantConfig& cfg)
{
    nn::Tensor y(q.shape());
    for (std::size_t i = 0; i < q.size(); ++i)
        y[i] = q[i] * cfg.qs;
    return y;
}

namespace {

template <typename F>
SubbandSet map_bands(const SubbandSet& s, F&& f)
{
    SubbandSet out;
    out.levels = s.levels;
    out.block_dims = s.block_dims;
    out.bands.reserve(s.bands.size());
    for (const auto& b : s.bands)
        out.bands.push_back(nn::Var(f(b.value())));
    return out;
}

} // namespace

SubbandSet quantize(const SubbandSet& y, const QuantConfig& cfg)
{
    return map_bands(y, [&](const nn::Tensor& t) { return quantize(t, cfg); });
}

SubbandSet dequantize(const SubbandSet& q, const QuantConfig& cfg)
{
    return map_bands(q, [&](const nn::Tensor& t) { return dequantize(t, cfg); });
}

nn::Var surrogate(const nn::Var& y, const QuantConfig& cfg, nn::Rng& rng)
{
    cfg.validate();
    if (cfg.surrogate == Surrogate::straight_through)
        return nn::scale(nn::round_ste(nn::scale(y, 1.0 / cfg.qs)), cfg.qs);
    std::uniform_real_distribution<double> u(-0.5 * cfg.qs, 0.5 * cfg.qs);
    nn::Tensor noise(y.shape());
    for (auto& v : noise.vec())
        v = u(rng);
    return nn::add(y, nn::Var(std::move(noise)));
}

} // namespace voxwave
