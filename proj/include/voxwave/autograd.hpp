#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// A Var is a handle to a graph node. Operations on Vars record a backward
// closure when gradient recording is enabled and at least one input requires a
// gradient; otherwise they only compute values, so the same code serves
// training and inference. Leaf Vars created with requires_grad = true are the
// trainable parameters; their gradients accumulate until zero_grad().

#include "voxwave/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace voxwave::nn {

struct Node {
    Tensor value;
    Tensor grad; // lazily allocated, same shape as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Tensor& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const { return node_ != nullptr; }

    /// Gradient accumulated by backward(); zero-filled if none arrived.
    Tensor& grad() const { return node_->grad_buffer(); }
    bool has_grad() const { return node_ && !node_->grad.empty(); }
    void zero_grad() const;

    /// Same value, cut from the graph.
    Var detach() const { return Var(node_->value, false); }

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
    friend Var make_op(Tensor, std::vector<Var>, std::function<void(Node&)>);
};

/// Build an op result; records `backward` only when recording is on and an
/// input needs a gradient.
Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

/// Run backward from a single-element root.
void backward(const Var& root);

bool grad_enabled();

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// ---- elementwise -----------------------------------------------------------
// Binary ops require equal shapes, except that `b` may hold a single element
// which is broadcast.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var scale(const Var& a, double s);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var softplus(const Var& a);
/// max(a, lo); zero gradient where clamped.
Var clamp_min(const Var& a, double lo);
/// Round half away from zero forward, identity gradient (straight-through).
Var round_ste(const Var& a);

// ---- reductions ------------------------------------------------------------
Var sum(const Var& a);
Var mean(const Var& a);
/// Sum of squared differences.
Var squared_error(const Var& a, const Var& b);
/// Sum of -log2(a); a must be positive.
Var neg_log2_sum(const Var& a);

// ---- layout ----------------------------------------------------------------
/// Swap two spatial axes (0 = z, 1 = y, 2 = x).
Var swap_axes(const Var& a, int axis0, int axis1);
/// Samples at even (parity 0) or odd (parity 1) indices along z.
Var take_parity(const Var& a, int parity);
/// Interleave even and odd halves along z (inverse of take_parity).
Var merge_parity(const Var& even, const Var& odd);
/// out[z] = a[clamp(z + offset)] along z (replicate boundary).
Var shift_replicate(const Var& a, int offset);
Var concat_channels(const std::vector<Var>& parts);
/// a + bias broadcast over space; bias has shape (a.c, 1, 1, 1).
Var add_channel_bias(const Var& a, const Var& bias);
Var slice_channels(const Var& a, int begin, int count);

} // namespace voxwave::nn
