#pragma once

// Uniform scalar quantization of subband coefficients.

#include "voxwave/nn.hpp"
#include "voxwave/transform.hpp"

namespace voxwave {

enum class Surrogate { uniform_noise, straight_through };

struct QuantConfig {
    double qs = 1.0;
    Surrogate surrogate = Surrogate::uniform_noise;

    /// Throws ConfigError unless qs is finite and positive.
    void validate() const;
};

/// round(y / qs), half away from zero.
double quantize_value(double y, double qs);

nn::Tensor quantize(const nn::Tensor& y, const QuantConfig& cfg);
nn::Tensor dequantize(const nn::Tensor& q, const QuantConfig& cfg);
SubbandSet quantize(const SubbandSet& y, const QuantConfig& cfg);
SubbandSet dequantize(const SubbandSet& q, const QuantConfig& cfg);

/// Training stand-in for dequantize(quantize(y)): y plus uniform noise in
/// [-qs/2, qs/2], or rounding with an identity gradient.
nn::Var surrogate(const nn::Var& y, const QuantConfig& cfg, nn::Rng& rng);

} // namespace voxwave
