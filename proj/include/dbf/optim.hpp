#pragma once

// SGD with momentum and classic weight decay, plus global L2 clipping.

#include <cstddef>
#include <map>
#include <span>

#include "dbf/autodiff.hpp"
#include "dbf/nn.hpp"

namespace dbf {

struct SgdConfig {
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double clip_max_norm = 35.0;
    std::size_t batch_size = 8;
    // Drop backbone velocity when the backbone unfreezes after frozen epochs.
    bool reset_velocity_on_unfreeze = false;

    void validate() const;
};

struct OptimState {
    std::map<ParamId, Tensor> velocity;  // created on a parameter's first update
};

// L2 norm over every entry of every gradient.
double global_norm(const Gradients& grads);

// Scales all gradients by max_norm / norm when norm exceeds max_norm.
Gradients clip_gradients(const Gradients& grads, double max_norm);

// For each parameter present in `grads`:
//   g = grad + weight_decay * p;  v = momentum * v + g;  p -= lr * v.
// Parameters absent from `grads` are not touched, nor is their velocity.
// Gradients for ids outside `params` are ignored.
void sgd_step(std::span<Parameter> params, const Gradients& grads, OptimState& state, double lr,
              const SgdConfig& cfg);

}  // namespace dbf
