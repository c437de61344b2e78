#include "voxwave/nn.hpp"

#include "voxwave/errors.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace voxwave::nn {

namespace {

constexpr int kCentreTap = 13;

// Copy of x with a one-voxel border (kernel 3) filled per the padding mode.
Tensor pad_input(const Tensor& x, int pad, Padding mode)
{
    if (pad == 0)
        return x;
    const Shape& s = x.shape();
    Shape ps{s.c, s.d + 2 * pad, s.h + 2 * pad, s.w + 2 * pad};
    Tensor p(ps, 0.0);
    for (int c = 0; c < s.c; ++c)
        for (int z = 0; z < ps.d; ++z) {
            int sz = z - pad;
            bool zin = sz >= 0 && sz < s.d;
            if (!zin && mode == Padding::zero)
                continue;
            sz = std::clamp(sz, 0, s.d - 1);
            for (int y = 0; y < ps.h; ++y) {
                int sy = y - pad;
                bool yin = sy >= 0 && sy < s.h;
                if (!yin && mode == Padding::zero)
                    continue;
                sy = std::clamp(sy, 0, s.h - 1);
                const double* src = x.data() + x.index(c, sz, sy, 0);
                double* dst = p.data() + p.index(c, z, y, 0);
                std::copy(src, src + s.w, dst + pad);
                if (mode == Padding::replicate)
                    for (int k = 0; k < pad; ++k) {
                        dst[k] = src[0];
                        dst[pad + s.w + k] = src[s.w - 1];
                    }
            }
        }
    return p;
}

// Accumulate the gradient of a padded tensor back onto the unpadded input.
void fold_padded_grad(const Tensor& gp, int pad, Padding mode, Tensor& gx)
{
    const Shape& s = gx.shape();
    const Shape& ps = gp.shape();
    for (int c = 0; c < s.c; ++c)
        for (int z = 0; z < ps.d; ++z) {
            int sz = z - pad;
            if ((sz < 0 || sz >= s.d) && mode == Padding::zero)
                continue;
            sz = std::clamp(sz, 0, s.d - 1);
            for (int y = 0; y < ps.h; ++y) {
                int sy = y - pad;
                if ((sy < 0 || sy >= s.h) && mode == Padding::zero)
                    continue;
                sy = std::clamp(sy, 0, s.h - 1);
                const double* src = gp.data() + gp.index(c, z, y, 0);
                double* dst = gx.data() + gx.index(c, sz, sy, 0);
                for (int x = 0; x < s.w; ++x)
                    dst[x] += src[x + pad];
                if (mode == Padding::replicate)
                    for (int k = 0; k < pad; ++k) {
                        dst[0] += src[k];
                        dst[s.w - 1] += src[pad + s.w + k];
                    }
            }
        }
}

} // namespace

bool ConvLayer::tap_allowed(int tap) const
{
    if (kernel != 3)
        return mask == MaskType::none || (mask == MaskType::type_b);
    switch (mask) {
    case MaskType::none:
        return true;
    case MaskType::type_a:
        return tap < kCentreTap;
    case MaskType::type_b:
        return tap <= kCentreTap;
    }
    return true;
}

Tensor ConvLayer::mask_tensor() const
{
    Tensor m(weight.shape(), 0.0);
    for (int co = 0; co < out_channels; ++co)
        for (int ci = 0; ci < in_channels; ++ci)
            for (int t = 0; t < taps(); ++t)
                m[(std::size_t(co) * in_channels + ci) * taps() + t] = tap_allowed(t) ? 1.0 : 0.0;
    return m;
}

ConvLayer ConvLayer::create(int in, int out, int kernel, Padding padding, MaskType mask, Rng& rng)
{
    if (kernel != 1 && kernel != 3)
        throw ConfigError("only 1x1x1 and 3x3x3 kernels are supported");
    ConvLayer l;
    l.in_channels = in;
    l.out_channels = out;
    l.kernel = kernel;
    l.padding = padding;
    l.mask = mask;
    int taps = kernel * kernel * kernel;
    double s = 1.0 / std::sqrt(double(in * taps));
    std::uniform_real_distribution<double> u(-s, s);
    Tensor w(Shape{out, in, taps, 1});
    for (auto& v : w.vec())
        v = to_storage_precision(u(rng));
    Tensor b(Shape{out, 1, 1, 1});
    for (auto& v : b.vec())
        v = to_storage_precision(u(rng));
    l.weight = Var(std::move(w), true);
    l.bias = Var(std::move(b), true);
    return l;
}

void ConvLayer::append_params(const std::string& prefix, std::vector<NamedParam>& out) const
{
    out.push_back({prefix + "/weight", weight});
    out.push_back({prefix + "/bias", bias});
}

Var conv3d(const Var& x, const ConvLayer& layer)
{
    const Shape& s = x.shape();
    if (s.c != layer.in_channels)
        throw ShapeError("conv3d: input has " + std::to_string(s.c) + " channels, layer expects " +
                         std::to_string(layer.in_channels));
    const int k = layer.kernel;
    const int pad = k / 2;
    const int taps = layer.taps();
    const int cin = layer.in_channels;
    const int cout = layer.out_channels;

    auto padded = std::make_shared<Tensor>(pad_input(x.value(), pad, layer.padding));
    const Shape& ps = padded->shape();
    std::vector<char> allowed(taps);
    for (int t = 0; t < taps; ++t)
        allowed[t] = layer.tap_allowed(t);

    Tensor out(Shape{cout, s.d, s.h, s.w});
    const double* wv = layer.weight.value().data();
    const double* bv = layer.bias.value().data();
    const std::size_t plane = std::size_t(s.h) * s.w;
    for (int co = 0; co < cout; ++co)
        for (int z = 0; z < s.d; ++z) {
            double* acc = out.data() + out.index(co, z, 0, 0);
            std::fill(acc, acc + plane, bv[co]);
            for (int ci = 0; ci < cin; ++ci)
                for (int t = 0; t < taps; ++t) {
                    if (!allowed[t])
                        continue;
                    const double w = wv[(std::size_t(co) * cin + ci) * taps + t];
                    const int kz = t / (k * k), ky = (t / k) % k, kx = t % k;
                    for (int y = 0; y < s.h; ++y) {
                        const double* src = padded->data() + padded->index(ci, z + kz, y + ky, kx);
                        double* a = acc + std::size_t(y) * s.w;
                        for (int xx = 0; xx < s.w; ++xx)
                            a[xx] += w * src[xx];
                    }
                }
        }

    Padding mode = layer.padding;
    return make_op(
        std::move(out), {x, layer.weight, layer.bias},
        [padded, allowed, k, pad, taps, cin, cout, mode, ps](Node& self) {
            auto& px = *self.parents[0];
            auto& pw = *self.parents[1];
            auto& pb = *self.parents[2];
            const Tensor& g = self.grad;
            const Shape& os = g.shape();
            const std::size_t plane = std::size_t(os.h) * os.w;
            if (pb.requires_grad) {
                auto& gb = pb.grad_buffer();
                for (int co = 0; co < cout; ++co) {
                    const double* gp = g.data() + g.index(co, 0, 0, 0);
                    double acc = 0.0;
                    for (std::size_t i = 0; i < os.spatial(); ++i)
                        acc += gp[i];
                    gb[co] += acc;
                }
            }
            Tensor gpad;
            if (px.requires_grad)
                gpad = Tensor(ps, 0.0);
            const double* wv = pw.value.data();
            for (int co = 0; co < cout; ++co)
                for (int z = 0; z < os.d; ++z) {
                    const double* gz = g.data() + g.index(co, z, 0, 0);
                    for (int ci = 0; ci < cin; ++ci)
                        for (int t = 0; t < taps; ++t) {
                            if (!allowed[t])
                                continue;
                            const int kz = t / (k * k), ky = (t / k) % k, kx = t % k;
                            const std::size_t wi = (std::size_t(co) * cin + ci) * taps + t;
                            if (pw.requires_grad) {
                                double acc = 0.0;
                                for (int y = 0; y < os.h; ++y) {
                                    const double* src = padded->data() + padded->index(ci, z + kz, y + ky, kx);
                                    const double* gr = gz + std::size_t(y) * os.w;
                                    for (int xx = 0; xx < os.w; ++xx)
                                        acc += gr[xx] * src[xx];
                                }
                                pw.grad_buffer()[wi] += acc;
                            }
                            if (px.requires_grad) {
                                const double w = wv[wi];
                                for (int y = 0; y < os.h; ++y) {
                                    double* dst = gpad.data() + gpad.index(ci, z + kz, y + ky, kx);
                                    const double* gr = gz + std::size_t(y) * os.w;
                                    for (int xx = 0; xx < os.w; ++xx)
                                        dst[xx] += w * gr[xx];
                                }
                            }
                        }
                }
            (void)plane;
            if (px.requires_grad)
                fold_padded_grad(gpad, pad, mode, px.grad_buffer());
        });
}

// ---- LiftNet ---------------------------------------------------------------

LiftNet LiftNet::create(int width, Padding padding, Rng& rng)
{
    LiftNet n;
    n.l1 = ConvLayer::create(1, width, 3, padding, MaskType::none, rng);
    n.l2 = ConvLayer::create(width, width, 3, padding, MaskType::none, rng);
    n.l3 = ConvLayer::create(width, 1, 3, padding, MaskType::none, rng);
    return n;
}

Var LiftNet::forward(const Var& x) const
{
    return conv3d(relu(conv3d(relu(conv3d(x, l1)), l2)), l3);
}

void LiftNet::append_params(const std::string& prefix, std::vector<NamedParam>& out) const
{
    l1.append_params(prefix + "/l1", out);
    l2.append_params(prefix + "/l2", out);
    l3.append_params(prefix + "/l3", out);
}

std::size_t LiftNet::parameter_count() const
{
    return l1.parameter_count() + l2.parameter_count() + l3.parameter_count();
}

void LiftNet::zero_output()
{
    l3.weight.mutable_value().fill(0.0);
    l3.bias.mutable_value().fill(0.0);
}

void LiftNet::set_linear_filter(const std::vector<int>& z_offsets, const std::vector<double>& taps)
{
    const int width = l1.out_channels;
    if (width < 2)
        throw ConfigError("linear-filter init needs at least two hidden channels");
    constexpr int centre = kCentreTap;
    auto tap_index = [](int dz) { return (dz + 1) * 9 + 4; };

    // Layer 1: channel 0 = +filter, channel 1 = -filter.
    auto& w1 = l1.weight.mutable_value();
    for (int co = 0; co < 2; ++co) {
        for (int t = 0; t < 27; ++t)
            w1[std::size_t(co) * 27 + t] = 0.0;
        for (std::size_t k = 0; k < taps.size(); ++k)
            w1[std::size_t(co) * 27 + tap_index(z_offsets[k])] = co == 0 ? taps[k] : -taps[k];
        l1.bias.mutable_value()[co] = 0.0;
    }
    // Layer 2: channels 0 and 1 pass through; nothing else feeds them.
    auto& w2 = l2.weight.mutable_value();
    for (int co = 0; co < 2; ++co) {
        for (int ci = 0; ci < width; ++ci)
            for (int t = 0; t < 27; ++t)
                w2[(std::size_t(co) * width + ci) * 27 + t] = (ci == co && t == centre) ? 1.0 : 0.0;
        l2.bias.mutable_value()[co] = 0.0;
    }
    // Layer 3: relu(f) - relu(-f) = f.
    zero_output();
    auto& w3 = l3.weight.mutable_value();
    w3[0 * 27 + centre] = 1.0;
    w3[1 * 27 + centre] = -1.0;
}

// ---- ResidualBlock ---------------------------------------------------------

ResidualBlock ResidualBlock::create(int width, Padding padding, Rng& rng)
{
    ResidualBlock b;
    b.c1 = ConvLayer::create(width, width, 3, padding, MaskType::none, rng);
    b.c2 = ConvLayer::create(width, width, 3, padding, MaskType::none, rng);
    return b;
}

Var ResidualBlock::forward(const Var& x) const
{
    return add(x, conv3d(relu(conv3d(x, c1)), c2));
}

void ResidualBlock::append_params(const std::string& prefix, std::vector<NamedParam>& out) const
{
    c1.append_params(prefix + "/c1", out);
    c2.append_params(prefix + "/c2", out);
}

double to_storage_precision(double v) { return double(float(v)); }

} // namespace voxwave::nn
