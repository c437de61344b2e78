#include "voxwave/synthetic.hpp"

#include <algorithm>
#include <cmath>

namespace voxwave {

namespace {

// Running-mean smoothing of radius r along one axis, replicate boundary.
void box_smooth(std::vector<double>& v, Dims d, int axis, int r)
{
    if (r <= 0)
        return;
    std::vector<double> out(v.size());
    const int n = d[axis];
    const std::size_t stride = axis == 0 ? std::size_t(d.h) * d.w : axis == 1 ? std::size_t(d.w) : 1;
    for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.h; ++y)
            for (int x = 0; x < d.w; ++x) {
                int p[3] = {z, y, x};
                int c = p[axis];
                std::size_t base = (std::size_t(z) * d.h + y) * d.w + x - std::size_t(c) * stride;
                double s = 0.0;
                for (int k = -r; k <= r; ++k)
                    s += v[base + std::size_t(std::clamp(c + k, 0, n - 1)) * stride];
                out[(std::size_t(z) * d.h + y) * d.w + x] = s / double(2 * r + 1);
            }
    v.swap(out);
}

} // namespace

Volume synthetic_volume(const SyntheticConfig& cfg, nn::Rng& rng)
{
    const Dims d = cfg.dims;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<double> field(d.count(), 0.0);
    for (int b = 0; b < cfg.blobs; ++b) {
        double c[3] = {unit(rng) * d.d, unit(rng) * d.h, unit(rng) * d.w};
        double sigma[3];
        double s = 0.1 + 0.2 * unit(rng);
        for (int a = 0; a < 3; ++a)
            sigma[a] = std::max(1.0, s * d[a] * (0.6 + 0.8 * unit(rng)));
        double amp = 0.3 + 0.7 * unit(rng);
        for (int z = 0; z < d.d; ++z)
            for (int y = 0; y < d.h; ++y)
                for (int x = 0; x < d.w; ++x) {
                    double dz = (z - c[0]) / sigma[0], dy = (y - c[1]) / sigma[1], dx = (x - c[2]) / sigma[2];
                    field[(std::size_t(z) * d.h + y) * d.w + x] += amp * std::exp(-0.5 * (dz * dz + dy * dy + dx * dx));
                }
    }

    std::vector<double> noise(d.count());
    for (auto& v : noise)
        v = normal(rng);
    box_smooth(noise, d, 0, cfg.smooth_z);
    box_smooth(noise, d, 1, cfg.smooth_xy);
    box_smooth(noise, d, 2, cfg.smooth_xy);
    double rms = 0.0;
    for (double v : noise)
        rms += v * v;
    rms = std::sqrt(rms / double(noise.size()));

    double peak = 0.0;
    for (double v : field)
        peak = std::max(peak, v);
    peak = std::max(peak, 1e-9);

    Volume out(d, cfg.bit_depth, false);
    const double top = out.max_value();
    for (std::size_t i = 0; i < field.size(); ++i) {
        double v = 0.1 + 0.75 * field[i] / peak + cfg.noise * noise[i] / std::max(rms, 1e-12);
        out.data[i] = std::clamp(std::round(v * top), 0.0, top);
    }
    return out;
}

std::vector<Volume> synthetic_corpus(std::size_t count, const SyntheticConfig& cfg, std::uint64_t seed)
{
    nn::Rng rng(seed);
    std::vector<Volume> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
        out.push_back(synthetic_volume(cfg, rng));
    return out;
}

Volume gaussian_blob(Dims dims, int bit_depth, double sigma)
{
    Volume v(dims, bit_depth, false);
    const double top = v.max_value();
    const double c[3] = {(dims.d - 1) / 2.0, (dims.h - 1) / 2.0, (dims.w - 1) / 2.0};
    for (int z = 0; z < dims.d; ++z)
        for (int y = 0; y < dims.h; ++y)
            for (int x = 0; x < dims.w; ++x) {
                double r2 = (z - c[0]) * (z - c[0]) + (y - c[1]) * (y - c[1]) + (x - c[2]) * (x - c[2]);
                v.at(z, y, x) = std::round(top * std::exp(-0.5 * r2 / (sigma * sigma)));
            }
    return v;
}

Volume random_volume(Dims dims, int bit_depth, bool is_signed, nn::Rng& rng)
{
    Volume v(dims, bit_depth, is_signed);
    std::uniform_int_distribution<std::int64_t> u(std::int64_t(v.min_value()), std::int64_t(v.max_value()));
    for (auto& s : v.data)
        s = double(u(rng));
    return v;
}

} // namespace voxwave
