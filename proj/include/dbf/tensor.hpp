#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dbf {

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tape;

// Dense row-major array of doubles. Values are immutable once constructed and
// shared between copies; a Tensor that is linked to a Tape node requires grad.
class Tensor {
public:
    Tensor();
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros(Shape shape);
    static Tensor filled(Shape shape, double value);
    static Tensor scalar(double value);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return values_->size(); }
    std::span<const double> values() const { return *values_; }
    double operator[](std::size_t i) const { return (*values_)[i]; }

    // The single value of a one-element tensor.
    double item() const;

    bool requires_grad() const { return tape_ != nullptr; }
    std::optional<NodeId> node() const;
    Tape* tape() const { return tape_; }

    // True when shapes match and every value has the same bit pattern.
    bool bit_equal(const Tensor& other) const;

private:
    friend class Tape;
    friend Tensor detach(const Tensor& t);

    Shape shape_;
    std::shared_ptr<const std::vector<double>> values_;
    Tape* tape_ = nullptr;
    NodeId node_ = 0;
};

}  // namespace dbf
