#pragma once

// Shared helpers for the unit tests and the acceptance suite.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dbf/autodiff.hpp"
#include "dbf/rng.hpp"

namespace dbf::testing {

inline std::filesystem::path scratch_dir(const std::string& name) {
    const std::filesystem::path dir = std::filesystem::path(DBF_TEST_TMP) / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline Tensor random_tensor(KeyedStream& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(element_count(shape));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v));
}

// Values bounded away from zero, so relu kinks are never within h of a sample.
inline Tensor away_from_zero(KeyedStream& rng, Shape shape, double margin = 0.05) {
    std::vector<double> v(element_count(shape));
    for (double& x : v) {
        const double mag = rng.uniform(margin, 1.0);
        x = rng.below(2) ? mag : -mag;
    }
    return Tensor(std::move(shape), std::move(v));
}

// Distinct values with pairwise gaps >= 1/size, shuffled, so maxpool has a
// unique winner that an h-sized nudge cannot change.
inline Tensor distinct_values(KeyedStream& rng, Shape shape) {
    const std::size_t n = element_count(shape);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n);
    for (std::size_t i = n; i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
    return Tensor(std::move(shape), std::move(v));
}

inline Tensor with_value(const Tensor& t, std::size_t i, double v) {
    std::vector<double> values(t.values().begin(), t.values().end());
    values[i] = v;
    return Tensor(t.shape(), std::move(values));
}

inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

// Central differences of a scalar function of several tensors.
inline std::vector<std::vector<double>> numeric_gradients(
    const std::function<double(const std::vector<Tensor>&)>& f, const std::vector<Tensor>& inputs, double h = 1e-6) {
    std::vector<std::vector<double>> grads;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        std::vector<double> g(inputs[k].size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            std::vector<Tensor> plus = inputs, minus = inputs;
            plus[k] = with_value(inputs[k], i, inputs[k][i] + h);
            minus[k] = with_value(inputs[k], i, inputs[k][i] - h);
            g[i] = (f(plus) - f(minus)) / (2.0 * h);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

// Fixed random projection that turns any op output into a scalar loss while
// exercising every output element.
inline Tensor projection_loss(const Tensor& out, std::uint64_t key) {
    KeyedStream rng(key);
    return ops::sum(ops::multiply(out, random_tensor(rng, out.shape())));
}

struct GradCheck {
    double max_rel_error = 0.0;
};

// Compares backward() against central differences for
// loss(x) = projection_loss(build(x), key).
inline GradCheck check_gradients(const std::function<Tensor(const std::vector<Tensor>&)>& build,
                                 const std::vector<Tensor>& inputs, std::uint64_t key, double h = 1e-6) {
    Tape tape;
    std::vector<Tensor> watched;
    for (std::size_t k = 0; k < inputs.size(); ++k) watched.push_back(tape.watch(inputs[k], k));
    const Gradients analytic = backward(projection_loss(build(watched), key), tape);

    auto f = [&](const std::vector<Tensor>& xs) { return projection_loss(build(xs), key).item(); };
    const auto numeric = numeric_gradients(f, inputs, h);

    GradCheck out;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const auto it = analytic.find(k);
        for (std::size_t i = 0; i < numeric[k].size(); ++i) {
            const double a = it == analytic.end() ? 0.0 : it->second[i];
            out.max_rel_error = std::max(out.max_rel_error, relative_error(a, numeric[k][i]));
        }
    }
    return out;
}

struct PrimitiveCase {
    OpKind kind = OpKind::add;
    std::vector<Tensor> inputs;
    OpAttrs attrs;

    Tensor apply(const std::vector<Tensor>& xs) const { return apply_primitive(kind, xs, attrs); }
};

// Every differentiable primitive, in the order the gradient oracle cycles
// through them.
inline const std::vector<OpKind>& primitive_kinds() {
    static const std::vector<OpKind> kinds{OpKind::add,     OpKind::multiply, OpKind::matmul,
                                           OpKind::conv2d,  OpKind::relu,     OpKind::maxpool2d,
                                           OpKind::flatten, OpKind::reshape,  OpKind::channels_last,
                                           OpKind::mean,    OpKind::sum};
    return kinds;
}

// A randomized instance of `kind` with at most 64 elements per tensor. Inputs
// stay clear of relu kinks and maxpool ties.
inline PrimitiveCase random_primitive_case(OpKind kind, KeyedStream& rng) {
    auto dim = [&](std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); };
    PrimitiveCase c;
    c.kind = kind;
    switch (kind) {
        case OpKind::add: {
            const Shape a{dim(1, 4), dim(1, 4), dim(1, 4)};
            const Shape b = rng.below(2) ? a : Shape{a.back()};  // elementwise or bias broadcast
            c.inputs = {random_tensor(rng, a), random_tensor(rng, b)};
            break;
        }
        case OpKind::multiply: {
            const Shape a{dim(1, 4), dim(1, 4), dim(1, 4)};
            c.inputs = {random_tensor(rng, a), random_tensor(rng, a)};
            break;
        }
        case OpKind::matmul: {
            const std::size_t m = dim(1, 5), k = dim(1, 5), n = dim(1, 5);
            c.inputs = {random_tensor(rng, {m, k}), random_tensor(rng, {k, n})};
            break;
        }
        case OpKind::conv2d: {
            const std::size_t n = dim(1, 2), ch = dim(1, 2), o = dim(1, 2), k = dim(1, 3);
            c.attrs.stride = dim(1, 2);
            c.attrs.padding = dim(0, 1);
            const std::size_t h = dim(k, 4), w = dim(k, 4);
            c.inputs = {random_tensor(rng, {n, ch, h, w}), random_tensor(rng, {o, ch, k, k})};
            if (rng.below(2)) c.inputs.push_back(random_tensor(rng, {o}));
            break;
        }
        case OpKind::relu: c.inputs = {away_from_zero(rng, {dim(1, 4), dim(1, 4), dim(1, 4)})}; break;
        case OpKind::maxpool2d: {
            c.attrs.kernel = dim(1, 3);
            c.attrs.stride = dim(1, 2);
            const std::size_t h = dim(c.attrs.kernel, 4), w = dim(c.attrs.kernel, 4);
            c.inputs = {distinct_values(rng, {dim(1, 2), dim(1, 2), h, w})};
            break;
        }
        case OpKind::flatten: c.inputs = {random_tensor(rng, {dim(1, 3), dim(1, 3), dim(1, 3)})}; break;
        case OpKind::reshape: {
            const std::size_t a = dim(1, 4), b = dim(1, 4), d = dim(1, 4);
            c.inputs = {random_tensor(rng, {a, b, d})};
            c.attrs.shape = {d, a * b};
            break;
        }
        case OpKind::channels_last:
            c.inputs = {random_tensor(rng, {dim(1, 2), dim(1, 3), dim(1, 3), dim(1, 3)})};
            break;
        case OpKind::mean:
        case OpKind::sum: c.inputs = {random_tensor(rng, {dim(1, 4), dim(1, 4)})}; break;
        default: break;
    }
    return c;
}

}  // namespace dbf::testing
