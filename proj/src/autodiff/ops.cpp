#include <algorithm>
#include <array>
#include <string>

#include "dbf/autodiff.hpp"
#include "dbf/errors.hpp"

namespace dbf {

namespace {

constexpr std::array<std::string_view, 13> kOpNames = {
    "leaf", "add",     "multiply",      "matmul", "conv2d", "relu",   "maxpool2d",
    "flatten", "reshape", "channels_last", "mean",   "sum",    "custom",
};

[[noreturn]] void shape_mismatch(std::string_view op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

std::vector<double> to_vector(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

bool is_suffix(const Shape& suffix, const Shape& full) {
    if (suffix.size() > full.size()) return false;
    return std::equal(suffix.rbegin(), suffix.rend(), full.rbegin());
}

struct ConvGeometry {
    std::size_t n, c, h, w, o, kh, kw, ho, wo, stride, pad;
};

ConvGeometry conv_geometry(const Shape& x, const Shape& weight, std::size_t stride, std::size_t padding) {
    if (x.size() != 4 || weight.size() != 4 || x[1] != weight[1]) shape_mismatch("conv2d", x, weight);
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    if (x[2] + 2 * padding < weight[2] || x[3] + 2 * padding < weight[3]) {
        throw ShapeError("conv2d: kernel " + shape_string(weight) + " larger than padded input " + shape_string(x));
    }
    ConvGeometry g{};
    g.n = x[0];
    g.c = x[1];
    g.h = x[2];
    g.w = x[3];
    g.o = weight[0];
    g.kh = weight[2];
    g.kw = weight[3];
    g.stride = stride;
    g.pad = padding;
    g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
    g.wo = (g.w + 2 * padding - g.kw) / stride + 1;
    return g;
}

// Calls f(out_index, x_index, w_index) for every in-bounds multiply-add of a
// direct convolution. Padding positions are skipped.
template <class F>
void for_each_tap(const ConvGeometry& g, F&& f) {
    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t o = 0; o < g.o; ++o) {
            for (std::size_t i = 0; i < g.ho; ++i) {
                for (std::size_t j = 0; j < g.wo; ++j) {
                    const std::size_t out_idx = ((n * g.o + o) * g.ho + i) * g.wo + j;
                    for (std::size_t c = 0; c < g.c; ++c) {
                        for (std::size_t ki = 0; ki < g.kh; ++ki) {
                            const std::size_t row = i * g.stride + ki;
                            if (row < g.pad || row - g.pad >= g.h) continue;
                            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                                const std::size_t col = j * g.stride + kj;
                                if (col < g.pad || col - g.pad >= g.w) continue;
                                const std::size_t x_idx = ((n * g.c + c) * g.h + (row - g.pad)) * g.w + (col - g.pad);
                                const std::size_t w_idx = ((o * g.c + c) * g.kh + ki) * g.kw + kj;
                                f(out_idx, x_idx, w_idx);
                            }
                        }
                    }
                }
            }
        }
    }
}

Tape* tape_of(std::span<const Tensor> operands) {
    for (const Tensor& t : operands) {
        if (t.tape()) return t.tape();
    }
    return nullptr;
}

Tensor finish(OpKind kind, std::span<const Tensor> operands, const OpAttrs& attrs, Tensor result,
              std::vector<std::size_t> indices = {}) {
    Tape* tape = tape_of(operands);
    if (tape == nullptr) return result;
    return tape->record(kind, operands, attrs, std::move(result), std::move(indices));
}

}  // namespace

std::string_view op_name(OpKind kind) { return kOpNames[static_cast<std::size_t>(kind)]; }

OpKind parse_op_kind(std::string_view name) {
    for (std::size_t i = 0; i < kOpNames.size(); ++i) {
        const auto kind = static_cast<OpKind>(i);
        if (kOpNames[i] == name && kind != OpKind::leaf && kind != OpKind::custom) return kind;
    }
    throw AutodiffError("unknown primitive kind '" + std::string(name) + "'");
}

namespace ops {

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape() && !is_suffix(b.shape(), a.shape())) shape_mismatch("add", a.shape(), b.shape());
    std::vector<double> out = to_vector(a);
    const std::size_t period = b.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % period];
    const std::array operands{a, b};
    return finish(OpKind::add, operands, {}, Tensor(a.shape(), std::move(out)));
}

Tensor multiply(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_mismatch("multiply", a.shape(), b.shape());
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    const std::array operands{a, b};
    return finish(OpKind::multiply, operands, {}, Tensor(a.shape(), std::move(out)));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) shape_mismatch("matmul", a.shape(), b.shape());
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * b[p * n + j];
        }
    }
    const std::array operands{a, b};
    return finish(OpKind::matmul, operands, {}, Tensor({m, n}, std::move(out)));
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias, std::size_t stride,
              std::size_t padding) {
    const ConvGeometry g = conv_geometry(x.shape(), weight.shape(), stride, padding);
    if (bias && bias->shape() != Shape{g.o}) shape_mismatch("conv2d bias", bias->shape(), Shape{g.o});

    std::vector<double> out(g.n * g.o * g.ho * g.wo, 0.0);
    const std::span<const double> xv = x.values();
    const std::span<const double> wv = weight.values();
    for_each_tap(g, [&](std::size_t oi, std::size_t xi, std::size_t wi) { out[oi] += xv[xi] * wv[wi]; });
    if (bias) {
        const std::size_t plane = g.ho * g.wo;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*bias)[(i / plane) % g.o];
    }

    OpAttrs attrs;
    attrs.stride = stride;
    attrs.padding = padding;
    Tensor result({g.n, g.o, g.ho, g.wo}, std::move(out));
    if (bias) {
        const std::array operands{x, weight, *bias};
        return finish(OpKind::conv2d, operands, attrs, std::move(result));
    }
    const std::array operands{x, weight};
    return finish(OpKind::conv2d, operands, attrs, std::move(result));
}

Tensor relu(const Tensor& x) {
    std::vector<double> out = to_vector(x);
    for (double& v : out) v = v > 0.0 ? v : 0.0;
    const std::array operands{x};
    return finish(OpKind::relu, operands, {}, Tensor(x.shape(), std::move(out)));
}

Tensor maxpool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
    if (x.rank() != 4) throw ShapeError("maxpool2d: expected [N, C, H, W], got " + shape_string(x.shape()));
    if (kernel < 1 || stride < 1) throw ShapeError("maxpool2d: kernel and stride must be >= 1");
    const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    if (h < kernel || w < kernel) throw ShapeError("maxpool2d: window larger than input " + shape_string(x.shape()));
    const std::size_t ho = (h - kernel) / stride + 1, wo = (w - kernel) / stride + 1;

    std::vector<double> out(n * c * ho * wo);
    std::vector<std::size_t> argmax(out.size());
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        for (std::size_t i = 0; i < ho; ++i) {
            for (std::size_t j = 0; j < wo; ++j) {
                std::size_t best = plane * h * w + (i * stride) * w + j * stride;
                for (std::size_t ki = 0; ki < kernel; ++ki) {
                    for (std::size_t kj = 0; kj < kernel; ++kj) {
                        const std::size_t idx = plane * h * w + (i * stride + ki) * w + (j * stride + kj);
                        if (x[idx] > x[best]) best = idx;
                    }
                }
                const std::size_t o = (plane * ho + i) * wo + j;
                out[o] = x[best];
                argmax[o] = best;
            }
        }
    }
    OpAttrs attrs;
    attrs.kernel = kernel;
    attrs.stride = stride;
    const std::array operands{x};
    return finish(OpKind::maxpool2d, operands, attrs, Tensor({n, c, ho, wo}, std::move(out)), std::move(argmax));
}

Tensor flatten(const Tensor& x) {
    if (x.rank() < 2) throw ShapeError("flatten: expected [N, ...], got " + shape_string(x.shape()));
    const std::size_t n = x.shape()[0];
    const std::array operands{x};
    return finish(OpKind::flatten, operands, {}, Tensor({n, x.size() / n}, to_vector(x)));
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (element_count(shape) != x.size()) shape_mismatch("reshape", x.shape(), shape);
    OpAttrs attrs;
    attrs.shape = shape;
    const std::array operands{x};
    return finish(OpKind::reshape, operands, attrs, Tensor(std::move(shape), to_vector(x)));
}

Tensor channels_last(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("channels_last: expected [N, C, H, W], got " + shape_string(x.shape()));
    const std::size_t n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    std::vector<double> out(x.size());
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < hw; ++p) out[(b * hw + p) * c + ch] = x[(b * c + ch) * hw + p];
    const std::array operands{x};
    return finish(OpKind::channels_last, operands, {},
                  Tensor({n, x.shape()[2], x.shape()[3], c}, std::move(out)));
}

Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.values()) total += v;
    const std::array operands{x};
    return finish(OpKind::sum, operands, {}, Tensor::scalar(total));
}

Tensor mean(const Tensor& x) {
    double total = 0.0;
    for (double v : x.values()) total += v;
    const std::array operands{x};
    return finish(OpKind::mean, operands, {}, Tensor::scalar(total / static_cast<double>(x.size())));
}

}  // namespace ops

Tensor apply_primitive(OpKind kind, std::span<const Tensor> operands, const OpAttrs& attrs) {
    auto arity = [&](std::size_t lo, std::size_t hi) {
        if (operands.size() < lo || operands.size() > hi) {
            throw AutodiffError(std::string(op_name(kind)) + ": expected " + std::to_string(lo) +
                                (lo == hi ? "" : "-" + std::to_string(hi)) + " operands, got " +
                                std::to_string(operands.size()));
        }
    };
    switch (kind) {
        case OpKind::add: arity(2, 2); return ops::add(operands[0], operands[1]);
        case OpKind::multiply: arity(2, 2); return ops::multiply(operands[0], operands[1]);
        case OpKind::matmul: arity(2, 2); return ops::matmul(operands[0], operands[1]);
        case OpKind::conv2d:
            arity(2, 3);
            return ops::conv2d(operands[0], operands[1],
                               operands.size() == 3 ? std::optional<Tensor>(operands[2]) : std::nullopt, attrs.stride,
                               attrs.padding);
        case OpKind::relu: arity(1, 1); return ops::relu(operands[0]);
        case OpKind::maxpool2d: arity(1, 1); return ops::maxpool2d(operands[0], attrs.kernel, attrs.stride);
        case OpKind::flatten: arity(1, 1); return ops::flatten(operands[0]);
        case OpKind::reshape: arity(1, 1); return ops::reshape(operands[0], attrs.shape);
        case OpKind::channels_last: arity(1, 1); return ops::channels_last(operands[0]);
        case OpKind::mean: arity(1, 1); return ops::mean(operands[0]);
        case OpKind::sum: arity(1, 1); return ops::sum(operands[0]);
        case OpKind::leaf:
        case OpKind::custom: break;
    }
    throw AutodiffError("unknown primitive kind '" + std::string(op_name(kind)) + "'");
}

Tensor apply_primitive(std::string_view kind, std::span<const Tensor> operands, const OpAttrs& attrs) {
    return apply_primitive(parse_op_kind(kind), operands, attrs);
}

namespace detail {

std::vector<std::vector<double>> builtin_vjp(const TapeNode& node, std::span<const double> grad_out) {
    std::vector<std::vector<double>> grads(node.inputs.size());
    auto wants = [&](std::size_t i) { return node.inputs[i].has_value(); };
    const std::vector<Tensor>& in = node.saved;

    switch (node.kind) {
        case OpKind::add: {
            if (wants(0)) grads[0].assign(grad_out.begin(), grad_out.end());
            if (wants(1)) {
                grads[1].assign(in[1].size(), 0.0);
                for (std::size_t i = 0; i < grad_out.size(); ++i) grads[1][i % in[1].size()] += grad_out[i];
            }
            break;
        }
        case OpKind::multiply: {
            for (std::size_t side = 0; side < 2; ++side) {
                if (!wants(side)) continue;
                const Tensor& other = in[1 - side];
                grads[side].resize(grad_out.size());
                for (std::size_t i = 0; i < grad_out.size(); ++i) grads[side][i] = grad_out[i] * other[i];
            }
            break;
        }
        case OpKind::matmul: {
            const std::size_t m = in[0].shape()[0], k = in[0].shape()[1], n = in[1].shape()[1];
            if (wants(0)) {
                grads[0].assign(m * k, 0.0);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p)
                        for (std::size_t j = 0; j < n; ++j) grads[0][i * k + p] += grad_out[i * n + j] * in[1][p * n + j];
            }
            if (wants(1)) {
                grads[1].assign(k * n, 0.0);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double av = in[0][i * k + p];
                        for (std::size_t j = 0; j < n; ++j) grads[1][p * n + j] += av * grad_out[i * n + j];
                    }
            }
            break;
        }
        case OpKind::conv2d: {
            const ConvGeometry g = conv_geometry(in[0].shape(), in[1].shape(), node.attrs.stride, node.attrs.padding);
            const std::span<const double> xv = in[0].values();
            const std::span<const double> wv = in[1].values();
            if (wants(0)) grads[0].assign(in[0].size(), 0.0);
            if (wants(1)) grads[1].assign(in[1].size(), 0.0);
            if (wants(0) || wants(1)) {
                const bool dx = wants(0), dw = wants(1);
                for_each_tap(g, [&](std::size_t oi, std::size_t xi, std::size_t wi) {
                    if (dx) grads[0][xi] += grad_out[oi] * wv[wi];
                    if (dw) grads[1][wi] += grad_out[oi] * xv[xi];
                });
            }
            if (in.size() == 3 && wants(2)) {
                grads[2].assign(g.o, 0.0);
                const std::size_t plane = g.ho * g.wo;
                for (std::size_t i = 0; i < grad_out.size(); ++i) grads[2][(i / plane) % g.o] += grad_out[i];
            }
            break;
        }
        case OpKind::relu: {
            if (wants(0)) {
                grads[0].resize(grad_out.size());
                for (std::size_t i = 0; i < grad_out.size(); ++i) grads[0][i] = in[0][i] > 0.0 ? grad_out[i] : 0.0;
            }
            break;
        }
        case OpKind::maxpool2d: {
            if (wants(0)) {
                grads[0].assign(in[0].size(), 0.0);
                for (std::size_t o = 0; o < grad_out.size(); ++o) grads[0][node.indices[o]] += grad_out[o];
            }
            break;
        }
        case OpKind::flatten:
        case OpKind::reshape: {
            if (wants(0)) grads[0].assign(grad_out.begin(), grad_out.end());
            break;
        }
        case OpKind::channels_last: {
            if (wants(0)) {
                const Shape& xs = in[0].shape();
                const std::size_t n = xs[0], c = xs[1], hw = xs[2] * xs[3];
                grads[0].resize(in[0].size());
                for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        for (std::size_t p = 0; p < hw; ++p) grads[0][(b * c + ch) * hw + p] = grad_out[(b * hw + p) * c + ch];
            }
            break;
        }
        case OpKind::sum: {
            if (wants(0)) grads[0].assign(in[0].size(), grad_out[0]);
            break;
        }
        case OpKind::mean: {
            if (wants(0)) grads[0].assign(in[0].size(), grad_out[0] / static_cast<double>(in[0].size()));
            break;
        }
        case OpKind::leaf:
        case OpKind::custom:
            throw AutodiffError("builtin_vjp called on " + std::string(op_name(node.kind)) + " node");
    }
    return grads;
}

}  // namespace detail

}  // namespace dbf
