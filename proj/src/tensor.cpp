#include "claf/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace claf {

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
        throw std::invalid_argument("Tensor: " + std::to_string(data_.size()) + " values for shape " +
                                    shape_to_string(shape_));
    }
}

std::span<float> Tensor::slice(std::size_t i) {
    const std::size_t stride = shape_.empty() ? 0 : size() / shape_[0];
    return {data_.data() + i * stride, stride};
}

std::span<const float> Tensor::slice(std::size_t i) const {
    const std::size_t stride = shape_.empty() ? 0 : size() / shape_[0];
    return {data_.data() + i * stride, stride};
}

Tensor Tensor::reshaped(Shape shape) const& {
    Tensor copy = *this;
    return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
    if (shape_numel(shape) != data_.size()) {
        throw std::invalid_argument("Tensor::reshaped: cannot view " + shape_to_string(shape_) + " as " +
                                    shape_to_string(shape));
    }
    shape_ = std::move(shape);
    return std::move(*this);
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

MatrixF to_matrix(const Tensor& t) {
    if (t.rank() != 2) throw std::invalid_argument("to_matrix: expected rank-2 tensor, got " + shape_to_string(t.shape()));
    return MatrixF(t.dim(0), t.dim(1), t.storage());
}

Tensor to_tensor(const MatrixF& m) { return Tensor({m.rows(), m.cols()}, m.storage()); }

}  // namespace claf
