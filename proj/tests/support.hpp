#pragma once

#include "voxwave/autograd.hpp"
#include "voxwave/nn.hpp"
#include "voxwave/volume_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

namespace testing {

using voxwave::nn::Rng;
using voxwave::nn::Shape;
using voxwave::nn::Tensor;
using voxwave::nn::Var;

inline Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(s);
    for (auto& v : t.vec())
        v = u(rng);
    return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// Adds uniform noise in [-amp, amp] to every parameter.
inline void perturb(const std::vector<voxwave::nn::NamedParam>& params, Rng& rng, double amp)
{
    std::uniform_real_distribution<double> u(-amp, amp);
    for (auto p : params)
        for (auto& w : p.var.mutable_value().vec())
            w += u(rng);
}

inline voxwave::Volume random_volume(voxwave::Dims dims, int bits, Rng& rng, bool is_signed = false)
{
    voxwave::Volume v(dims, bits, is_signed);
    std::uniform_real_distribution<double> u(v.min_value(), v.max_value() + 1.0);
    for (auto& s : v.data)
        s = std::min(std::floor(u(rng)), v.max_value());
    return v;
}

struct GradCheck {
    double max_rel_error = 0.0;
    int checked = 0;
};

/// Compares backward() against central differences on up to `samples`
/// entries of each variable. Relative error uses max(|a|, |n|, floor) as the
/// denominator so that exact zeros compare on an absolute scale.
inline GradCheck grad_check(const std::vector<Var>& vars, const std::function<Var()>& loss, int samples = 8,
                            double h = 1e-5, double floor = 1e-6)
{
    for (const auto& v : vars)
        v.zero_grad();
    voxwave::nn::backward(loss());
    std::vector<Tensor> analytic;
    for (const auto& v : vars)
        analytic.push_back(v.grad());

    GradCheck r;
    voxwave::nn::NoGradGuard ng;
    for (std::size_t k = 0; k < vars.size(); ++k) {
        Var v = vars[k];
        const std::size_t n = v.value().size();
        const std::size_t count = std::min<std::size_t>(n, std::size_t(samples));
        for (std::size_t j = 0; j < count; ++j) {
            const std::size_t i = count == n ? j : (j * n) / count + (n / count) / 2;
            const double orig = v.value()[i];
            v.mutable_value()[i] = orig + h;
            const double fp = loss().value()[0];
            v.mutable_value()[i] = orig - h;
            const double fm = loss().value()[0];
            v.mutable_value()[i] = orig;
            const double num = (fp - fm) / (2 * h);
            const double a = analytic[k][i];
            const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor});
            r.max_rel_error = std::max(r.max_rel_error, rel);
            ++r.checked;
        }
    }
    return r;
}

/// Like grad_check, but each element is differenced at several step sizes
/// and the best agreement counts: piecewise-linear activations leave kinks
/// that a single step can straddle.
inline GradCheck grad_check_steps(const std::vector<Var>& vars, const std::function<Var()>& loss, int samples,
                                  const std::vector<double>& steps, double floor = 1e-6)
{
    for (const auto& v : vars)
        v.zero_grad();
    voxwave::nn::backward(loss());
    std::vector<Tensor> analytic;
    for (const auto& v : vars)
        analytic.push_back(v.grad());

    GradCheck r;
    voxwave::nn::NoGradGuard ng;
    for (std::size_t k = 0; k < vars.size(); ++k) {
        Var v = vars[k];
        const std::size_t n = v.value().size();
        const std::size_t count = std::min<std::size_t>(n, std::size_t(samples));
        for (std::size_t j = 0; j < count; ++j) {
            const std::size_t i = count == n ? j : (j * n) / count + (n / count) / 2;
            const double orig = v.value()[i];
            const double a = analytic[k][i];
            double best = std::numeric_limits<double>::infinity();
            for (double h : steps) {
                v.mutable_value()[i] = orig + h;
                const double fp = loss().value()[0];
                v.mutable_value()[i] = orig - h;
                const double fm = loss().value()[0];
                v.mutable_value()[i] = orig;
                const double num = (fp - fm) / (2 * h);
                best = std::min(best, std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor}));
            }
            r.max_rel_error = std::max(r.max_rel_error, best);
            ++r.checked;
        }
    }
    return r;
}

/// Unique path under the system temp directory, removed on destruction.
class TempDir {
public:
    TempDir()
    {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("voxwave_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

} // namespace testing
