#pragma once

// Define-by-run reverse-mode differentiation over dbf::Tensor.
//
// A Tape records every primitive whose operands require grad. Parameters enter
// the tape through Tape::watch, which tags the leaf with a ParamId; backward()
// replays the tape in reverse append order and returns one gradient per
// watched parameter that the loss actually depends on.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "dbf/tensor.hpp"

namespace dbf {

using ParamId = std::size_t;
using Gradients = std::map<ParamId, Tensor>;

enum class OpKind : std::uint8_t {
    leaf,
    add,
    multiply,
    matmul,
    conv2d,
    relu,
    maxpool2d,
    flatten,
    reshape,
    channels_last,
    mean,
    sum,
    custom,
};

std::string_view op_name(OpKind kind);

// Parses a primitive name ("add", "conv2d", ...). Throws AutodiffError on an
// unknown name; "leaf" and "custom" are not primitives and are rejected.
OpKind parse_op_kind(std::string_view name);

struct OpAttrs {
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t kernel = 2;  // maxpool2d window
    Shape shape;             // reshape target
};

// Vector-Jacobian product of a composite op recorded via Tape::record_custom.
// Receives dL/d(output) and returns dL/d(input_i) for each operand (an empty
// vector for operands that need no gradient).
using CustomVjp = std::function<std::vector<std::vector<double>>(std::span<const double> grad_out)>;

struct TapeNode {
    OpKind kind = OpKind::leaf;
    std::vector<std::optional<NodeId>> inputs;
    std::vector<Tensor> saved;  // operand values, detached
    std::vector<std::size_t> indices;  // maxpool argmax per output element
    OpAttrs attrs;
    Shape out_shape;
    std::optional<ParamId> param;
    CustomVjp custom;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers `value` as a differentiable leaf for parameter `id`.
    Tensor watch(const Tensor& value, ParamId id);

    // Links `result` to a new node when any operand is on this tape; otherwise
    // returns it unchanged. Operands on a different tape are an error.
    Tensor record(OpKind kind, std::span<const Tensor> operands, const OpAttrs& attrs, Tensor result,
                  std::vector<std::size_t> indices = {});
    Tensor record_custom(std::span<const Tensor> operands, Tensor result, CustomVjp vjp);

    std::size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }
    const TapeNode& node(NodeId id) const { return nodes_.at(id); }

private:
    Tensor link(TapeNode node, Tensor result);

    std::vector<TapeNode> nodes_;
};

// Value-identical copy with no tape linkage.
Tensor detach(const Tensor& t);

// Gradients of a one-element `loss` with respect to every parameter watched on
// `tape` that the loss depends on. A loss that is not on the tape (e.g. built
// only from detached values) yields an empty map.
Gradients backward(const Tensor& loss, const Tape& tape);

// Generic entry point: dispatches to the ops below.
Tensor apply_primitive(OpKind kind, std::span<const Tensor> operands, const OpAttrs& attrs = {});
Tensor apply_primitive(std::string_view kind, std::span<const Tensor> operands, const OpAttrs& attrs = {});

namespace ops {

// Elementwise; `b` may also match a trailing suffix of a's shape (bias add).
Tensor add(const Tensor& a, const Tensor& b);
// Elementwise, identical shapes.
Tensor multiply(const Tensor& a, const Tensor& b);
// [m, k] x [k, n] -> [m, n]
Tensor matmul(const Tensor& a, const Tensor& b);
// x [N, C, H, W], weight [O, C, kh, kw], optional bias [O] -> [N, O, Ho, Wo]
Tensor conv2d(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias, std::size_t stride = 1,
              std::size_t padding = 0);
Tensor relu(const Tensor& x);
// x [N, C, H, W]; window kernel x kernel, no padding. Ties go to the first max.
Tensor maxpool2d(const Tensor& x, std::size_t kernel, std::size_t stride);
// [N, d1, d2, ...] -> [N, d1*d2*...]
Tensor flatten(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
// [N, C, H, W] -> [N, H, W, C]
Tensor channels_last(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x);

}  // namespace ops

namespace detail {
// dL/d(operand_i) for a built-in node. Entry i is empty when input i needs no
// gradient.
std::vector<std::vector<double>> builtin_vjp(const TapeNode& node, std::span<const double> grad_out);
}  // namespace detail

}  // namespace dbf
