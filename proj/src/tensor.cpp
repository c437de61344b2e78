#include "voxwave/tensor.hpp"

#include "voxwave/errors.hpp"

#include <algorithm>
#include <cmath>

namespace voxwave::nn {

std::string Shape::str() const
{
    return "(" + std::to_string(c) + "," + std::to_string(d) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.size(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data))
{
    if (data_.size() != shape_.size())
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_.str());
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

} // namespace voxwave::nn
