#include <string>

#include "dbf/autodiff.hpp"
#include "dbf/errors.hpp"

namespace dbf {

Tensor Tape::watch(const Tensor& value, ParamId id) {
    TapeNode node;
    node.kind = OpKind::leaf;
    node.out_shape = value.shape();
    node.param = id;
    return link(std::move(node), detach(value));
}

Tensor Tape::record(OpKind kind, std::span<const Tensor> operands, const OpAttrs& attrs, Tensor result,
                    std::vector<std::size_t> indices) {
    bool any = false;
    for (const Tensor& t : operands) {
        if (t.tape() == nullptr) continue;
        if (t.tape() != this) throw AutodiffError(std::string(op_name(kind)) + ": operands recorded on another tape");
        any = true;
    }
    if (!any) return result;

    TapeNode node;
    node.kind = kind;
    node.attrs = attrs;
    node.out_shape = result.shape();
    node.indices = std::move(indices);
    node.inputs.reserve(operands.size());
    node.saved.reserve(operands.size());
    for (const Tensor& t : operands) {
        node.inputs.push_back(t.node());
        node.saved.push_back(detach(t));
    }
    return link(std::move(node), std::move(result));
}

Tensor Tape::record_custom(std::span<const Tensor> operands, Tensor result, CustomVjp vjp) {
    bool any = false;
    for (const Tensor& t : operands) {
        if (t.tape() == nullptr) continue;
        if (t.tape() != this) throw AutodiffError("custom op: operands recorded on another tape");
        any = true;
    }
    if (!any) return result;

    TapeNode node;
    node.kind = OpKind::custom;
    node.out_shape = result.shape();
    node.custom = std::move(vjp);
    for (const Tensor& t : operands) node.inputs.push_back(t.node());
    return link(std::move(node), std::move(result));
}

Tensor Tape::link(TapeNode node, Tensor result) {
    nodes_.push_back(std::move(node));
    result.tape_ = this;
    result.node_ = nodes_.size() - 1;
    return result;
}

Tensor detach(const Tensor& t) {
    // Shares the immutable value buffer; only the linkage is dropped.
    Tensor out = t;
    out.tape_ = nullptr;
    out.node_ = 0;
    return out;
}

Gradients backward(const Tensor& loss, const Tape& tape) {
    if (loss.size() != 1) throw AutodiffError("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
    if (tape.empty()) throw AutodiffError("backward: tape is empty");
    Gradients grads;
    if (loss.tape() == nullptr) return grads;
    if (loss.tape() != &tape) throw AutodiffError("backward: loss was recorded on a different tape");

    const NodeId root = *loss.node();
    std::vector<std::vector<double>> adjoint(root + 1);
    adjoint[root] = {1.0};

    for (NodeId id = root + 1; id-- > 0;) {
        if (adjoint[id].empty()) continue;
        const TapeNode& node = tape.node(id);
        if (node.kind == OpKind::leaf) {
            auto [it, inserted] = grads.try_emplace(*node.param, Tensor(node.out_shape, adjoint[id]));
            if (!inserted) {
                std::vector<double> acc(it->second.values().begin(), it->second.values().end());
                for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += adjoint[id][i];
                it->second = Tensor(node.out_shape, std::move(acc));
            }
            continue;
        }
        std::vector<std::vector<double>> input_grads =
            node.kind == OpKind::custom ? node.custom(adjoint[id]) : detail::builtin_vjp(node, adjoint[id]);
        for (std::size_t i = 0; i < node.inputs.size(); ++i) {
            if (!node.inputs[i] || input_grads[i].empty()) continue;
            std::vector<double>& dst = adjoint[*node.inputs[i]];
            if (dst.empty()) {
                dst = std::move(input_grads[i]);
            } else {
                for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += input_grads[i][k];
            }
        }
        adjoint[id].clear();
        adjoint[id].shrink_to_fit();
    }
    return grads;
}

}  // namespace dbf
