#include "support.hpp"

#include "voxwave/errors.hpp"
#include "voxwave/nn.hpp"

#include <doctest.h>

using namespace voxwave;
using namespace voxwave::nn;
using testing::random_tensor;

namespace {

// Nested-loop cross-correlation with the same tap layout as conv3d.
Tensor naive_conv(const Tensor& x, const ConvLayer& l)
{
    const Shape s = x.shape();
    const int k = l.kernel, r = k / 2;
    Tensor out(Shape{l.out_channels, s.d, s.h, s.w});
    auto sample = [&](int c, int z, int y, int xx) {
        if (l.padding == Padding::replicate) {
            z = std::clamp(z, 0, s.d - 1);
            y = std::clamp(y, 0, s.h - 1);
            xx = std::clamp(xx, 0, s.w - 1);
        } else if (z < 0 || y < 0 || xx < 0 || z >= s.d || y >= s.h || xx >= s.w) {
            return 0.0;
        }
        return x.at(c, z, y, xx);
    };
    for (int co = 0; co < l.out_channels; ++co)
        for (int z = 0; z < s.d; ++z)
            for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx) {
                    double acc = l.bias.value()[co];
                    for (int ci = 0; ci < l.in_channels; ++ci)
                        for (int dz = -r; dz <= r; ++dz)
                            for (int dy = -r; dy <= r; ++dy)
                                for (int dx = -r; dx <= r; ++dx) {
                                    int tap = ((dz + r) * k + (dy + r)) * k + (dx + r);
                                    if (!l.tap_allowed(tap))
                                        continue;
                                    acc += l.w(co, ci, tap) * sample(ci, z + dz, y + dy, xx + dx);
                                }
                    out.at(co, z, y, xx) = acc;
                }
    return out;
}

} // namespace

TEST_CASE("identity kernel reproduces the input")
{
    Rng rng(1);
    ConvLayer l = ConvLayer::create(1, 1, 3, Padding::zero, MaskType::none, rng);
    l.weight.mutable_value().fill(0.0);
    l.weight.mutable_value()[13] = 1.0;
    l.bias.mutable_value().fill(0.0);
    Tensor x = random_tensor({1, 5, 4, 3}, rng);
    CHECK(testing::max_abs_diff(conv3d(Var(x), l).value(), x) == 0.0);
}

TEST_CASE("all-ones kernel sums 27 neighbours")
{
    Rng rng(2);
    ConvLayer l = ConvLayer::create(1, 1, 3, Padding::zero, MaskType::none, rng);
    l.weight.mutable_value().fill(1.0);
    l.bias.mutable_value().fill(0.0);
    Tensor x(Shape{1, 5, 5, 5}, 2.5);
    Tensor y = conv3d(Var(x), l).value();
    CHECK(y.at(0, 2, 2, 2) == doctest::Approx(27 * 2.5));
    CHECK(y.at(0, 0, 0, 0) == doctest::Approx(8 * 2.5)); // corner sees 2x2x2 under zero padding
    l.padding = Padding::replicate;
    CHECK(conv3d(Var(x), l).value().at(0, 0, 0, 0) == doctest::Approx(27 * 2.5));
}

TEST_CASE("conv3d matches the nested-loop oracle")
{
    Rng rng(3);
    for (Padding p : {Padding::zero, Padding::replicate})
        for (MaskType m : {MaskType::none, MaskType::type_a, MaskType::type_b})
            for (int k : {1, 3}) {
                if (k == 1 && m == MaskType::type_a)
                    continue;
                ConvLayer l = ConvLayer::create(2, 2, k, p, m, rng);
                for (int batch = 0; batch < 2; ++batch) {
                    Tensor x = random_tensor({2, 4, 4, 4}, rng);
                    CHECK(testing::max_abs_diff(conv3d(Var(x), l).value(), naive_conv(x, l)) < 1e-6);
                }
            }
}

TEST_CASE("masks")
{
    Rng rng(4);
    ConvLayer a = ConvLayer::create(1, 1, 3, Padding::zero, MaskType::type_a, rng);
    ConvLayer b = ConvLayer::create(1, 1, 3, Padding::zero, MaskType::type_b, rng);
    for (int t = 0; t < 27; ++t) {
        CHECK(a.tap_allowed(t) == (t < 13));
        CHECK(b.tap_allowed(t) == (t <= 13));
    }
}

TEST_CASE("activations")
{
    Tensor t(Shape{1, 1, 1, 2});
    t[0] = -1;
    t[1] = 2;
    Tensor r = relu(Var(t)).value();
    CHECK(r[0] == 0.0);
    CHECK(r[1] == 2.0);
    CHECK(sigmoid(Var(Tensor::scalar(0))).value()[0] == 0.5);
    CHECK(nn::tanh(Var(Tensor::scalar(0))).value()[0] == 0.0);
    CHECK(round_ste(Var(Tensor::scalar(-2.5))).value()[0] == -3.0);
    CHECK(round_ste(Var(Tensor::scalar(2.5))).value()[0] == 3.0);
}

TEST_CASE("residual block")
{
    Rng rng(5);
    ResidualBlock blk = ResidualBlock::create(4, Padding::replicate, rng);
    Tensor x = random_tensor({4, 3, 3, 3}, rng);
    Tensor y = blk.forward(Var(x)).value();
    CHECK(y.shape() == x.shape());
    Tensor manual = conv3d(relu(conv3d(Var(x), blk.c1)), blk.c2).value();
    for (std::size_t i = 0; i < x.size(); ++i)
        manual[i] += x[i];
    CHECK(testing::max_abs_diff(y, manual) < 1e-12);

    blk.c1.weight.mutable_value().fill(0);
    blk.c1.bias.mutable_value().fill(0);
    blk.c2.weight.mutable_value().fill(0);
    blk.c2.bias.mutable_value().fill(0);
    CHECK(testing::max_abs_diff(blk.forward(Var(x)).value(), x) == 0.0);

    ResidualBlock wide = ResidualBlock::create(16, Padding::zero, rng);
    CHECK(wide.forward(Var(random_tensor({16, 8, 8, 8}, rng))).shape() == Shape{16, 8, 8, 8});
}

TEST_CASE("autograd basics")
{
    Var x(Tensor(Shape{1, 2, 2, 2}, 0.3), true);
    backward(sum(x));
    for (double g : x.grad().vec())
        CHECK(g == 1.0);

    Var y(Tensor(Shape{1, 2, 2, 2}, -0.7), true);
    backward(sum(relu(y)));
    for (double g : y.grad().vec())
        CHECK(g == 0.0);

    CHECK_THROWS_AS(backward(x), UsageError);

    {
        NoGradGuard ng;
        Var z = nn::scale(x, 2.0);
        CHECK_FALSE(z.requires_grad());
    }
    CHECK(grad_enabled());
}

TEST_CASE("conv + tanh network gradient against central differences")
{
    Rng rng(6);
    ConvLayer l1 = ConvLayer::create(2, 3, 3, Padding::zero, MaskType::none, rng);
    ConvLayer l2 = ConvLayer::create(3, 1, 3, Padding::replicate, MaskType::none, rng);
    Var x(random_tensor({2, 4, 3, 5}, rng), true);
    auto loss = [&] { return sum(nn::tanh(conv3d(nn::tanh(conv3d(x, l1)), l2))); };
    auto r = testing::grad_check({x, l1.weight, l1.bias, l2.weight, l2.bias}, loss, 12, 1e-3);
    CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("elementwise and layout op gradients")
{
    Rng rng(7);
    Var a(random_tensor({2, 4, 3, 2}, rng, 0.2, 1.5), true);
    Var b(random_tensor({2, 4, 3, 2}, rng, 0.2, 1.5), true);
    Var s(random_tensor({1, 1, 1, 1}, rng, 0.5, 1.0), true);
    Var bias(random_tensor({2, 1, 1, 1}, rng), true);
    auto loss = [&] {
        Var t = add(mul(a, sigmoid(b)), div(softplus(a), b));
        t = sub(t, mul(nn::tanh(b), s));
        t = add_channel_bias(t, bias);
        t = swap_axes(t, 0, 2);
        t = swap_axes(t, 1, 2);
        Var e = take_parity(t, 0), o = take_parity(t, 1);
        t = merge_parity(shift_replicate(o, 1), add_scalar(e, 0.5));
        t = concat_channels({slice_channels(t, 1, 1), t});
        return add(squared_error(t, Var(Tensor(t.shape(), 0.1))), neg_log2_sum(sigmoid(t)));
    };
    auto r = testing::grad_check({a, b, s, bias}, loss, 24);
    CHECK(r.max_rel_error < 1e-6);
    CHECK(r.checked > 40);
}

TEST_CASE("lifting network and masked conv gradients")
{
    Rng rng(8);
    LiftNet net = LiftNet::create(4, Padding::replicate, rng);
    ConvLayer m = ConvLayer::create(2, 2, 3, Padding::zero, MaskType::type_a, rng);
    Var x(random_tensor({1, 4, 4, 4}, rng), true);
    Var x2(random_tensor({2, 3, 3, 3}, rng), true);
    auto loss = [&] { return add(mean(net.forward(x)), sum(mul(conv3d(x2, m), conv3d(x2, m)))); };
    std::vector<Var> vars{x, x2, m.weight, m.bias};
    std::vector<NamedParam> ps;
    net.append_params("net", ps);
    for (auto& p : ps)
        vars.push_back(p.var);
    auto r = testing::grad_check(vars, loss, 10);
    CHECK(r.max_rel_error < 1e-4);
    // Masked taps receive no gradient.
    m.weight.zero_grad();
    backward(sum(conv3d(x2, m)));
    for (int co = 0; co < 2; ++co)
        for (int ci = 0; ci < 2; ++ci)
            for (int t = 13; t < 27; ++t)
                CHECK(m.weight.grad()[(co * 2 + ci) * 27 + t] == 0.0);
}

TEST_CASE("linear-filter initialisation computes the filter")
{
    Rng rng(9);
    LiftNet net = LiftNet::create(4, Padding::replicate, rng);
    net.set_linear_filter({0, 1}, {0.5, 0.5});
    Tensor x = random_tensor({1, 6, 2, 3}, rng);
    Tensor y = net.forward(Var(x)).value();
    for (int z = 0; z < 6; ++z)
        for (int yy = 0; yy < 2; ++yy)
            for (int xx = 0; xx < 3; ++xx) {
                double want = 0.5 * x.at(0, z, yy, xx) + 0.5 * x.at(0, std::min(z + 1, 5), yy, xx);
                CHECK(y.at(0, z, yy, xx) == doctest::Approx(want).epsilon(1e-12));
            }
}

TEST_CASE("shape errors")
{
    Var a(Tensor(Shape{1, 2, 2, 2}));
    Var b(Tensor(Shape{1, 2, 2, 3}));
    CHECK_THROWS_AS(add(a, b), ShapeError);
    CHECK(to_storage_precision(0.1) == double(0.1f));
}
