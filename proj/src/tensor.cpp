#include "ssnet/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "ssnet/error.hpp"

namespace ssnet {

std::size_t shape_numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill)
{
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data))
{
    if (shape_numel(shape_) != data_.size())
        throw Error(ErrorCode::shape_mismatch,
                    "shape " + shape_string(shape_) + " does not hold " + std::to_string(data_.size()) + " values");
}

Tensor::Tensor(Shape shape, std::initializer_list<float> data) : Tensor(std::move(shape), std::vector<float>(data))
{
}

float Tensor::item() const
{
    if (data_.size() != 1)
        throw Error(ErrorCode::shape_mismatch, "item() on tensor of shape " + shape_string(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const
{
    if (shape_numel(shape) != data_.size())
        throw Error(ErrorCode::shape_mismatch, "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept
{
    for (float v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

} // namespace ssnet
