#include "dbf/optim.hpp"

#include <cmath>

#include "dbf/errors.hpp"

namespace dbf {

void SgdConfig::validate() const {
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("sgd.momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("sgd.weight_decay must be >= 0");
    if (!(clip_max_norm > 0.0)) throw ConfigError("sgd.clip_max_norm must be > 0");
    if (batch_size == 0) throw ConfigError("sgd.batch_size must be >= 1");
}

double global_norm(const Gradients& grads) {
    double sq = 0.0;
    for (const auto& [id, g] : grads) {
        for (double v : g.values()) sq += v * v;
    }
    return std::sqrt(sq);
}

Gradients clip_gradients(const Gradients& grads, double max_norm) {
    if (!(max_norm > 0.0)) throw ConfigError("clip max_norm must be > 0");
    const double norm = global_norm(grads);
    if (!(norm > max_norm)) return grads;
    const double scale = max_norm / norm;
    Gradients clipped;
    for (const auto& [id, g] : grads) {
        std::vector<double> v(g.values().begin(), g.values().end());
        for (double& x : v) x *= scale;
        clipped.emplace(id, Tensor(g.shape(), std::move(v)));
    }
    return clipped;
}

void sgd_step(std::span<Parameter> params, const Gradients& grads, OptimState& state, double lr,
              const SgdConfig& cfg) {
    if (!(lr > 0.0)) throw ConfigError("sgd_step: lr must be > 0");
    for (Parameter& p : params) {
        const auto it = grads.find(p.id);
        if (it == grads.end()) continue;
        const Tensor& grad = it->second;
        if (grad.shape() != p.value.shape()) {
            throw ShapeError("sgd_step: gradient " + shape_string(grad.shape()) + " for parameter " +
                             std::to_string(p.id) + " of shape " + shape_string(p.value.shape()));
        }
        auto [vit, created] = state.velocity.try_emplace(p.id, Tensor::zeros(p.value.shape()));
        std::vector<double> v(vit->second.values().begin(), vit->second.values().end());
        std::vector<double> w(p.value.values().begin(), p.value.values().end());
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double g = grad[i] + cfg.weight_decay * w[i];
            v[i] = cfg.momentum * v[i] + g;
            w[i] -= lr * v[i];
        }
        vit->second = Tensor(p.value.shape(), std::move(v));
        p.value = Tensor(p.value.shape(), std::move(w));
    }
}

}  // namespace dbf
