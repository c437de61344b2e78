#include "support.hpp"

#include "voxwave/errors.hpp"
#include "voxwave/quantizer.hpp"

#include <doctest.h>

using namespace voxwave;
using nn::Var;

TEST_CASE("quantize examples")
{
    CHECK(quantize_value(3.7, 1) == 4);
    CHECK(quantize_value(-2.5, 1) == -3);
    CHECK(quantize_value(2.5, 1) == 3);
    CHECK(quantize_value(10.2, 4) == 3); // round(2.55)
}

TEST_CASE("dequantize examples")
{
    QuantConfig one{1.0};
    QuantConfig four{4.0};
    nn::Tensor q(nn::Shape{1, 1, 1, 1}, 4.0);
    CHECK(dequantize(q, one)[0] == 4.0);
    nn::Tensor q3(nn::Shape{1, 1, 1, 1}, 3.0);
    double r = dequantize(q3, four)[0];
    CHECK(r == 12.0);
    CHECK(std::abs(10.2 - r) <= 2.0);

    nn::Rng rng(1);
    nn::Tensor ints = testing::random_tensor({1, 4, 4, 4}, rng, -100, 100);
    for (auto& v : ints.vec())
        v = std::round(v);
    CHECK(dequantize(quantize(ints, one), one).vec() == ints.vec());
}

TEST_CASE("error bound of quantize then dequantize")
{
    nn::Rng rng(2);
    for (double qs : {0.3, 1.0, 7.5}) {
        QuantConfig c{qs};
        nn::Tensor y = testing::random_tensor({1, 8, 8, 8}, rng, -500, 500);
        nn::Tensor r = dequantize(quantize(y, c), c);
        CHECK(testing::max_abs_diff(y, r) <= qs / 2 + 1e-12);
    }
}

TEST_CASE("surrogates")
{
    nn::Rng rng(3);
    Var y(testing::random_tensor({1, 6, 6, 6}, rng, -50, 50), true);
    QuantConfig noise{2.0, Surrogate::uniform_noise};
    Var n = surrogate(y, noise, rng);
    CHECK(testing::max_abs_diff(n.value(), y.value()) <= 1.0);
    CHECK(testing::max_abs_diff(n.value(), y.value()) > 0.0);

    QuantConfig ste{2.0, Surrogate::straight_through};
    Var s = surrogate(y, ste, rng);
    CHECK(s.value().vec() == dequantize(quantize(y.value(), ste), ste).vec());
    y.zero_grad();
    nn::backward(nn::sum(s));
    for (double g : y.grad().vec())
        CHECK(g == 1.0);

    y.zero_grad();
    nn::backward(nn::sum(surrogate(y, noise, rng)));
    for (double g : y.grad().vec())
        CHECK(g == 1.0);
}

TEST_CASE("invalid steps")
{
    CHECK_THROWS_AS(QuantConfig{0.0}.validate(), ConfigError);
    CHECK_THROWS_AS(QuantConfig{-1.0}.validate(), ConfigError);
    CHECK_THROWS_AS(QuantConfig{std::nan("")}.validate(), ConfigError);
    CHECK_NOTHROW(QuantConfig{0.5}.validate());
}
