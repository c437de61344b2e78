#pragma once

// 3-D convolution layers and the small network blocks built from them.

#include "voxwave/autograd.hpp"

#include <random>
#include <string>
#include <vector>

namespace voxwave::nn {

using Rng = std::mt19937_64;

enum class Padding { zero, replicate };

/// Causal masks in raster (z, y, x) order. Type A excludes the centre tap,
/// type B keeps it.
enum class MaskType { none, type_a, type_b };

struct NamedParam {
    std::string name;
    Var var;
};

struct ConvLayer {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3; // 1 or 3
    Padding padding = Padding::zero;
    MaskType mask = MaskType::none;
    Var weight; // (out, in, kernel^3, 1)
    Var bias;   // (out, 1, 1, 1)

    /// Uniform init in [-s, s], s = 1/sqrt(fan_in), for weights and bias.
    static ConvLayer create(int in, int out, int kernel, Padding padding, MaskType mask, Rng& rng);

    int taps() const { return kernel * kernel * kernel; }
    double w(int co, int ci, int tap) const
    {
        return weight.value()[(std::size_t(co) * in_channels + ci) * taps() + tap];
    }
    bool tap_allowed(int tap) const;
    /// Binary mask with the weight's shape (all ones when unmasked).
    Tensor mask_tensor() const;
    void append_params(const std::string& prefix, std::vector<NamedParam>& out) const;
    std::size_t parameter_count() const { return weight.value().size() + bias.value().size(); }
};

/// Stride-1 "same" 3-D convolution, double accumulation. Masked taps are
/// skipped in the forward pass and receive no weight gradient.
Var conv3d(const Var& x, const ConvLayer& layer);

/// conv(1->w) -> ReLU -> conv(w->w) -> ReLU -> conv(w->1), all 3x3x3.
struct LiftNet {
    ConvLayer l1, l2, l3;

    static LiftNet create(int width, Padding padding, Rng& rng);
    Var forward(const Var& x) const;
    void append_params(const std::string& prefix, std::vector<NamedParam>& out) const;
    std::size_t parameter_count() const;
    /// Zero the output layer so the network starts by predicting 0.
    void zero_output();
    /// Overwrite two hidden channels so the network computes exactly the
    /// linear filter sum_k taps[k] * x[z + offsets[k]] along z (the network
    /// frame's first axis); the remaining channels keep their random init but
    /// are disconnected from the output.
    void set_linear_filter(const std::vector<int>& z_offsets, const std::vector<double>& taps);
};

/// x + conv(relu(conv(x))), width preserved.
struct ResidualBlock {
    ConvLayer c1, c2;

    static ResidualBlock create(int width, Padding padding, Rng& rng);
    Var forward(const Var& x) const;
    void append_params(const std::string& prefix, std::vector<NamedParam>& out) const;
    std::size_t parameter_count() const { return c1.parameter_count() + c2.parameter_count(); }
};

/// Value rounded through float32, the precision weights are stored at.
double to_storage_precision(double v);

} // namespace voxwave::nn
