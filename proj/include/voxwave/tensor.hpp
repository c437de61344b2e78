#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace voxwave::nn {

/// (channel, z, y, x) extents of a dense tensor.
struct Shape {
    int c = 1;
    int d = 1;
    int h = 1;
    int w = 1;

    std::size_t size() const { return std::size_t(c) * d * h * w; }
    std::size_t spatial() const { return std::size_t(d) * h * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

/// Dense double-precision 4-D array, row-major in (c, z, y, x).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor(Shape{}, v); }

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> span() { return data_; }
    std::span<const double> span() const { return data_; }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::size_t index(int c, int z, int y, int x) const
    {
        return ((std::size_t(c) * shape_.d + z) * shape_.h + y) * shape_.w + x;
    }
    double& at(int c, int z, int y, int x) { return data_[index(c, z, y, x)]; }
    double at(int c, int z, int y, int x) const { return data_[index(c, z, y, x)]; }

    void fill(double v);
    bool all_finite() const;

private:
    Shape shape_{0, 0, 0, 0};
    std::vector<double> data_;
};

} // namespace voxwave::nn
