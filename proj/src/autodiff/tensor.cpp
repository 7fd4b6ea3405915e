#include "dbf/tensor.hpp"

#include <cstring>
#include <sstream>

#include "dbf/errors.hpp"

namespace dbf {

std::size_t element_count(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ", ";
        out << shape[i];
    }
    out << ']';
    return out.str();
}

Tensor::Tensor() : shape_{1}, values_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
    for (std::size_t d : shape_) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
    }
    if (element_count(shape_) != values.size()) {
        throw ShapeError("tensor of shape " + shape_string(shape_) + " needs " +
                         std::to_string(element_count(shape_)) + " values, got " + std::to_string(values.size()));
    }
    values_ = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
    const std::size_t n = element_count(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    return (*values_)[0];
}

std::optional<NodeId> Tensor::node() const {
    if (tape_ == nullptr) return std::nullopt;
    return node_;
}

bool Tensor::bit_equal(const Tensor& other) const {
    if (shape_ != other.shape_) return false;
    return std::memcmp(values_->data(), other.values_->data(), size() * sizeof(double)) == 0;
}

}  // namespace dbf
