#include "voxwave/autograd.hpp"

#include "voxwave/errors.hpp"

#include <cmath>
#include <unordered_set>

namespace voxwave::nn {

namespace {

thread_local bool g_grad_enabled = true;

void require_same(const Shape& a, const Shape& b, const char* op)
{
    if (!(a == b))
        throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

bool broadcast_b(const Var& a, const Var& b, const char* op)
{
    if (b.value().size() == 1 && a.value().size() != 1)
        return true;
    require_same(a.shape(), b.shape(), op);
    return false;
}

double stable_sigmoid(double x)
{
    if (x >= 0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus_value(double x)
{
    // log(1 + e^x) without overflow
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename F>
Tensor unary(const Var& a, F&& f)
{
    Tensor out(a.shape());
    const auto& in = a.value();
    for (std::size_t i = 0; i < in.size(); ++i)
        out[i] = f(in[i]);
    return out;
}

} // namespace

Tensor& Node::grad_buffer()
{
    if (grad.empty())
        grad = Tensor(value.shape(), 0.0);
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>())
{
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

void Var::zero_grad() const
{
    if (node_ && !node_->grad.empty())
        node_->grad.fill(0.0);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn)
{
    Var out;
    out.node_ = std::make_shared<Node>();
    out.node_->value = std::move(value);
    if (!g_grad_enabled)
        return out;
    bool any = false;
    for (const auto& in : inputs)
        any = any || in.requires_grad();
    if (!any)
        return out;
    out.node_->requires_grad = true;
    out.node_->parents.reserve(inputs.size());
    for (auto& in : inputs)
        out.node_->parents.push_back(in.node());
    out.node_->backward = std::move(backward_fn);
    return out;
}

void backward(const Var& root)
{
    if (!root.defined() || root.value().size() != 1)
        throw UsageError("backward() needs a single-element root");
    if (!root.requires_grad())
        return;

    // Iterative post-order DFS for a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second)
                stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty())
            n->backward(*n);
    }
}

// ---- elementwise -----------------------------------------------------------

Var add(const Var& a, const Var& b)
{
    bool bc = broadcast_b(a, b, "add");
    Tensor out(a.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = av[i] + (bc ? bv[0] : bv[i]);
    return make_op(std::move(out), {a, b}, [bc](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const auto& g = self.grad;
        if (pa.requires_grad) {
            auto& ga = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                ga[i] += g[i];
        }
        if (pb.requires_grad) {
            auto& gb = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                gb[bc ? 0 : i] += g[i];
        }
    });
}

Var sub(const Var& a, const Var& b)
{
    bool bc = broadcast_b(a, b, "sub");
    Tensor out(a.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = av[i] - (bc ? bv[0] : bv[i]);
    return make_op(std::move(out), {a, b}, [bc](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const auto& g = self.grad;
        if (pa.requires_grad) {
            auto& ga = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                ga[i] += g[i];
        }
        if (pb.requires_grad) {
            auto& gb = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                gb[bc ? 0 : i] -= g[i];
        }
    });
}

Var mul(const Var& a, const Var& b)
{
    bool bc = broadcast_b(a, b, "mul");
    Tensor out(a.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = av[i] * (bc ? bv[0] : bv[i]);
    return make_op(std::move(out), {a, b}, [bc](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const auto& g = self.grad;
        const auto& av = pa.value;
        const auto& bv = pb.value;
        if (pa.requires_grad) {
            auto& ga = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                ga[i] += g[i] * (bc ? bv[0] : bv[i]);
        }
        if (pb.requires_grad) {
            auto& gb = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                gb[bc ? 0 : i] += g[i] * av[i];
        }
    });
}

Var div(const Var& a, const Var& b)
{
    bool bc = broadcast_b(a, b, "div");
    Tensor out(a.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = av[i] / (bc ? bv[0] : bv[i]);
    return make_op(std::move(out), {a, b}, [bc](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const auto& g = self.grad;
        const auto& av = pa.value;
        const auto& bv = pb.value;
        if (pa.requires_grad) {
            auto& ga = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                ga[i] += g[i] / (bc ? bv[0] : bv[i]);
        }
        if (pb.requires_grad) {
            auto& gb = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                double d = bc ? bv[0] : bv[i];
                gb[bc ? 0 : i] -= g[i] * av[i] / (d * d);
            }
        }
    });
}

Var add_scalar(const Var& a, double s)
{
    Tensor r = unary(a, [s](double v) { return v + s; });
    return make_op(std::move(r), {a}, [](Node& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            ga[i] += self.grad[i];
    });
}

Var scale(const Var& a, double s)
{
    Tensor r = unary(a, [s](double v) { return v * s; });
    return make_op(std::move(r), {a}, [s](Node& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            ga[i] += self.grad[i] * s;
    });
}

Var relu(const Var& a)
{
    Tensor r = unary(a, [](double v) { return v > 0 ? v : 0.0; });
    return make_op(std::move(r), {a}, [](Node& self) {
        auto& p = *self.parents[0];
        auto& ga = p.grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (p.value[i] > 0)
                ga[i] += self.grad[i];
    });
}

Var sigmoid(const Var& a)
{
    Tensor r = unary(a, stable_sigmoid);
    return make_op(std::move(r), {a}, [](Node& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            double s = self.value[i];
            ga[i] += self.grad[i] * s * (1.0 - s);
        }
    });
}

Var tanh(const Var& a)
{
    Tensor r = unary(a, [](double v) { return std::tanh(v); });
    return make_op(std::move(r), {a}, [](Node& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            double t = self.value[i];
            ga[i] += self.grad[i] * (1.0 - t * t);
        }
    });
}

Var softplus(const Var& a)
{
    Tensor r = unary(a, softplus_value);
    return make_op(std::move(r), {a}, [](Node& self) {
        auto& p = *self.parents[0];
        auto& ga = p.grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            ga[i] += self.grad[i] * stable_sigmoid(p.value[i]);
    });
}

Var clamp_min(const Var& a, double lo)
{
    Tensor r = unary(a, [lo](double v) { return v < lo ? lo : v; });
    return make_op(std::move(r), {a}, [lo](Node& self) {
        auto& p = *self.parents[0];
        auto& ga = p.grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (p.value[i] >= lo)
                ga[i] += self.grad[i];
    });
}

Var round_ste(const Var& a)
{
    Tensor r = unary(a, [](double v) { return std::round(v); }); // half away from zero
    return make_op(std::move(r), {a}, [](Node& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            ga[i] += self.grad[i];
    });
}

// ---- reductions ------------------------------------------------------------

Var sum(const Var& a)
{
    double s = 0.0;
    for (double v : a.value().span())
        s += v;
    return make_op(Tensor::scalar(s), {a}, [](Node& self) {
        auto& ga = self.parents[0]->grad_buffer();
        double g = self.grad[0];
        for (std::size_t i = 0; i < ga.size(); ++i)
            ga[i] += g;
    });
}

Var mean(const Var& a)
{
    return scale(sum(a), 1.0 / double(a.value().size()));
}

Var squared_error(const Var& a, const Var& b)
{
    require_same(a.shape(), b.shape(), "squared_error");
    double s = 0.0;
    for (std::size_t i = 0; i < a.value().size(); ++i) {
        double d = a.value()[i] - b.value()[i];
        s += d * d;
    }
    return make_op(Tensor::scalar(s), {a, b}, [](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        double g = self.grad[0];
        for (std::size_t i = 0; i < pa.value.size(); ++i) {
            double d = 2.0 * g * (pa.value[i] - pb.value[i]);
            if (pa.requires_grad)
                pa.grad_buffer()[i] += d;
            if (pb.requires_grad)
                pb.grad_buffer()[i] -= d;
        }
    });
}

Var neg_log2_sum(const Var& a)
{
    double s = 0.0;
    for (double v : a.value().span())
        s -= std::log2(v);
    return make_op(Tensor::scalar(s), {a}, [](Node& self) {
        auto& p = *self.parents[0];
        auto& ga = p.grad_buffer();
        double g = self.grad[0] / std::log(2.0);
        for (std::size_t i = 0; i < ga.size(); ++i)
            ga[i] -= g / p.value[i];
    });
}

// ---- layout ----------------------------------------------------------------

namespace {

// Index map for swapping spatial axes: returns the source index in `in` for
// each destination element of `out`.
std::vector<std::size_t> swap_index(const Shape& in, int a0, int a1, Shape& out_shape)
{
    int dims[3] = {in.d, in.h, in.w};
    int od[3] = {dims[0], dims[1], dims[2]};
    std::swap(od[a0], od[a1]);
    out_shape = Shape{in.c, od[0], od[1], od[2]};
    std::vector<std::size_t> idx(in.size());
    std::size_t k = 0;
    for (int c = 0; c < in.c; ++c)
        for (int z = 0; z < od[0]; ++z)
            for (int y = 0; y < od[1]; ++y)
                for (int x = 0; x < od[2]; ++x) {
                    int p[3] = {z, y, x};
                    std::swap(p[a0], p[a1]);
                    idx[k++] = ((std::size_t(c) * in.d + p[0]) * in.h + p[1]) * in.w + p[2];
                }
    return idx;
}

} // namespace

Var swap_axes(const Var& a, int axis0, int axis1)
{
    if (axis0 < 0 || axis0 > 2 || axis1 < 0 || axis1 > 2)
        throw UsageError("swap_axes: axis out of range");
    if (axis0 == axis1)
        return a;
    Shape os;
    auto idx = std::make_shared<std::vector<std::size_t>>(swap_index(a.shape(), axis0, axis1, os));
    Tensor out(os);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.value()[(*idx)[i]];
    return make_op(std::move(out), {a}, [idx](Node& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            ga[(*idx)[i]] += self.grad[i];
    });
}

Var take_parity(const Var& a, int parity)
{
    const Shape& s = a.shape();
    if (s.d % 2 != 0)
        throw ShapeError("take_parity: odd length " + std::to_string(s.d) + " along split axis");
    Shape os{s.c, s.d / 2, s.h, s.w};
    std::size_t plane = std::size_t(s.h) * s.w;
    Tensor out(os);
    for (int c = 0; c < s.c; ++c)
        for (int z = 0; z < os.d; ++z) {
            const double* src = a.value().data() + (std::size_t(c) * s.d + 2 * z + parity) * plane;
            double* dst = out.data() + (std::size_t(c) * os.d + z) * plane;
            std::copy(src, src + plane, dst);
        }
    return make_op(std::move(out), {a}, [parity, plane](Node& self) {
        auto& p = *self.parents[0];
        auto& ga = p.grad_buffer();
        const Shape& s = p.value.shape();
        int hd = s.d / 2;
        for (int c = 0; c < s.c; ++c)
            for (int z = 0; z < hd; ++z) {
                const double* g = self.grad.data() + (std::size_t(c) * hd + z) * plane;
                double* dst = ga.data() + (std::size_t(c) * s.d + 2 * z + parity) * plane;
                for (std::size_t i = 0; i < plane; ++i)
                    dst[i] += g[i];
            }
    });
}

Var merge_parity(const Var& even, const Var& odd)
{
    require_same(even.shape(), odd.shape(), "merge_parity");
    const Shape& s = even.shape();
    Shape os{s.c, s.d * 2, s.h, s.w};
    std::size_t plane = std::size_t(s.h) * s.w;
    Tensor out(os);
    for (int c = 0; c < s.c; ++c)
        for (int z = 0; z < s.d; ++z)
            for (int parity = 0; parity < 2; ++parity) {
                const Var& src = parity == 0 ? even : odd;
                const double* from = src.value().data() + (std::size_t(c) * s.d + z) * plane;
                double* dst = out.data() + (std::size_t(c) * os.d + 2 * z + parity) * plane;
                std::copy(from, from + plane, dst);
            }
    return make_op(std::move(out), {even, odd}, [plane](Node& self) {
        const Shape& s = self.parents[0]->value.shape();
        for (int parity = 0; parity < 2; ++parity) {
            auto& p = *self.parents[parity];
            if (!p.requires_grad)
                continue;
            auto& gp = p.grad_buffer();
            for (int c = 0; c < s.c; ++c)
                for (int z = 0; z < s.d; ++z) {
                    const double* g =
                        self.grad.data() + (std::size_t(c) * 2 * s.d + 2 * z + parity) * plane;
                    double* dst = gp.data() + (std::size_t(c) * s.d + z) * plane;
                    for (std::size_t i = 0; i < plane; ++i)
                        dst[i] += g[i];
                }
        }
    });
}

Var shift_replicate(const Var& a, int offset)
{
    const Shape& s = a.shape();
    std::size_t plane = std::size_t(s.h) * s.w;
    auto src_z = [s, offset](int z) { return std::clamp(z + offset, 0, s.d - 1); };
    Tensor out(s);
    for (int c = 0; c < s.c; ++c)
        for (int z = 0; z < s.d; ++z) {
            const double* from = a.value().data() + (std::size_t(c) * s.d + src_z(z)) * plane;
            std::copy(from, from + plane, out.data() + (std::size_t(c) * s.d + z) * plane);
        }
    return make_op(std::move(out), {a}, [plane, src_z](Node& self) {
        auto& p = *self.parents[0];
        auto& ga = p.grad_buffer();
        const Shape& s = p.value.shape();
        for (int c = 0; c < s.c; ++c)
            for (int z = 0; z < s.d; ++z) {
                const double* g = self.grad.data() + (std::size_t(c) * s.d + z) * plane;
                double* dst = ga.data() + (std::size_t(c) * s.d + src_z(z)) * plane;
                for (std::size_t i = 0; i < plane; ++i)
                    dst[i] += g[i];
            }
    });
}

Var concat_channels(const std::vector<Var>& parts)
{
    if (parts.empty())
        throw UsageError("concat_channels: no inputs");
    Shape s = parts[0].shape();
    int channels = 0;
    for (const auto& p : parts) {
        const Shape& ps = p.shape();
        if (ps.d != s.d || ps.h != s.h || ps.w != s.w)
            throw ShapeError("concat_channels: spatial mismatch " + ps.str() + " vs " + s.str());
        channels += ps.c;
    }
    Tensor out(Shape{channels, s.d, s.h, s.w});
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + off);
        off += p.value().size();
    }
    return make_op(std::move(out), parts, [](Node& self) {
        std::size_t off = 0;
        for (auto& p : self.parents) {
            std::size_t n = p->value.size();
            if (p->requires_grad) {
                auto& gp = p->grad_buffer();
                for (std::size_t i = 0; i < n; ++i)
                    gp[i] += self.grad[off + i];
            }
            off += n;
        }
    });
}

Var add_channel_bias(const Var& a, const Var& bias)
{
    const Shape& s = a.shape();
    if (bias.value().size() != std::size_t(s.c))
        throw ShapeError("add_channel_bias: bias " + bias.shape().str() + " for input " + s.str());
    const std::size_t sp = s.spatial();
    Tensor out(s);
    for (int c = 0; c < s.c; ++c) {
        const double b = bias.value()[c];
        const double* src = a.value().data() + c * sp;
        double* dst = out.data() + c * sp;
        for (std::size_t i = 0; i < sp; ++i)
            dst[i] = src[i] + b;
    }
    return make_op(std::move(out), {a, bias}, [sp](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& ga = pa.grad_buffer();
            for (std::size_t i = 0; i < ga.size(); ++i)
                ga[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            auto& gb = pb.grad_buffer();
            for (std::size_t c = 0; c < gb.size(); ++c) {
                double acc = 0.0;
                for (std::size_t i = 0; i < sp; ++i)
                    acc += self.grad[c * sp + i];
                gb[c] += acc;
            }
        }
    });
}

Var slice_channels(const Var& a, int begin, int count)
{
    const Shape& s = a.shape();
    if (begin < 0 || count <= 0 || begin + count > s.c)
        throw ShapeError("slice_channels: range out of bounds for " + s.str());
    std::size_t sp = s.spatial();
    Tensor out(Shape{count, s.d, s.h, s.w});
    std::copy(a.value().data() + begin * sp, a.value().data() + (begin + count) * sp, out.data());
    return make_op(std::move(out), {a}, [begin, sp](Node& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            ga[begin * sp + i] += self.grad[i];
    });
}

} // namespace voxwave::nn
