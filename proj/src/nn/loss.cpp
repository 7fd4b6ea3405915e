#include <algorithm>
#include <array>
#include <cmath>
#include <memory>

#include "dbf/errors.hpp"
#include "dbf/nn.hpp"

namespace dbf {

namespace {

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Binary cross-entropy of a logit against a {0, 1} target.
double bce_with_logit(double x, double t) { return std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

Tensor encode_targets(std::span<const std::vector<GroundTruth>> per_image, std::size_t grid_size,
                      std::size_t num_classes, double image_size) {
    const std::size_t k = 1 + num_classes + 4;
    const std::size_t s = grid_size;
    const double cell = image_size / static_cast<double>(s);
    std::vector<double> t(per_image.size() * s * s * k, 0.0);
    for (std::size_t b = 0; b < per_image.size(); ++b) {
        for (const GroundTruth& g : per_image[b]) {
            if (g.class_id >= num_classes) throw ConfigError("ground truth class id out of range");
            const double cx = 0.5 * (g.box.xmin + g.box.xmax) / cell;
            const double cy = 0.5 * (g.box.ymin + g.box.ymax) / cell;
            const auto col = std::min(static_cast<std::size_t>(std::max(cx, 0.0)), s - 1);
            const auto row = std::min(static_cast<std::size_t>(std::max(cy, 0.0)), s - 1);
            double* c = &t[((b * s + row) * s + col) * k];
            if (c[0] != 0.0) continue;
            c[0] = 1.0;
            c[1 + g.class_id] = 1.0;
            c[1 + num_classes + 0] = cx - static_cast<double>(col);
            c[1 + num_classes + 1] = cy - static_cast<double>(row);
            c[1 + num_classes + 2] = std::log(g.box.width() / cell);
            c[1 + num_classes + 3] = std::log(g.box.height() / cell);
        }
    }
    return Tensor({per_image.size(), s, s, k}, std::move(t));
}

Tensor detection_loss(const PredictionGrid& pred, const Tensor& targets) {
    if (pred.values.shape() != targets.shape()) {
        throw ShapeError("detection_loss: prediction " + shape_string(pred.values.shape()) + " vs targets " +
                         shape_string(targets.shape()));
    }
    const std::size_t c = pred.num_classes;
    const std::size_t k = 1 + c + 4;
    if (pred.values.rank() != 4 || pred.values.shape()[3] != k) {
        throw ShapeError("detection_loss: expected [N, S, S, " + std::to_string(k) + "], got " +
                         shape_string(pred.values.shape()));
    }
    const std::size_t cells = pred.values.size() / k;
    const std::span<const double> p = pred.values.values();
    const std::span<const double> t = targets.values();

    std::size_t positives = 0;
    for (std::size_t i = 0; i < cells; ++i) positives += t[i * k] > 0.5;

    auto grad = std::make_shared<std::vector<double>>(p.size(), 0.0);
    double obj = 0.0, cls = 0.0, box = 0.0;
    const double inv_cells = 1.0 / static_cast<double>(cells);
    const double inv_pos = positives ? 1.0 / static_cast<double>(positives) : 0.0;
    std::vector<double> prob(c);
    for (std::size_t i = 0; i < cells; ++i) {
        const double* pc = &p[i * k];
        const double* tc = &t[i * k];
        double* gc = &(*grad)[i * k];

        obj += bce_with_logit(pc[0], tc[0]);
        gc[0] = (sigmoid(pc[0]) - tc[0]) * inv_cells;
        if (tc[0] <= 0.5) continue;

        const double zmax = *std::max_element(pc + 1, pc + 1 + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            prob[j] = std::exp(pc[1 + j] - zmax);
            z += prob[j];
        }
        for (std::size_t j = 0; j < c; ++j) {
            prob[j] /= z;
            cls -= tc[1 + j] * (pc[1 + j] - zmax - std::log(z));
            gc[1 + j] = (prob[j] - tc[1 + j]) * inv_pos;
        }
        for (std::size_t j = 1 + c; j < k; ++j) {
            const double diff = pc[j] - tc[j];
            box += diff * diff;
            gc[j] = 2.0 * diff * inv_pos;
        }
    }
    const double loss = obj * inv_cells + cls * inv_pos + box * inv_pos;

    Tensor result = Tensor::scalar(loss);
    Tape* tape = pred.values.tape();
    if (tape == nullptr) return result;
    const std::array operands{pred.values};
    return tape->record_custom(operands, std::move(result), [grad](std::span<const double> grad_out) {
        std::vector<std::vector<double>> out(1, *grad);
        for (double& v : out[0]) v *= grad_out[0];
        return out;
    });
}

std::vector<Detection> decode_predictions(const PredictionGrid& pred, double image_size, std::size_t first_image_id) {
    const std::size_t s = pred.grid_size, c = pred.num_classes, k = 1 + c + 4;
    const double cell = image_size / static_cast<double>(s);
    const std::span<const double> p = pred.values.values();
    std::vector<Detection> dets;
    for (std::size_t b = 0; b < pred.batch(); ++b) {
        for (std::size_t row = 0; row < s; ++row) {
            for (std::size_t col = 0; col < s; ++col) {
                const double* pc = &p[((b * s + row) * s + col) * k];
                const double objectness = sigmoid(pc[0]);
                if (!(objectness > 0.5)) continue;

                const double zmax = *std::max_element(pc + 1, pc + 1 + c);
                std::size_t best = 0;
                double z = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    z += std::exp(pc[1 + j] - zmax);
                    if (pc[1 + j] > pc[1 + best]) best = j;
                }
                const double class_prob = std::exp(pc[1 + best] - zmax) / z;

                const double cx = (static_cast<double>(col) + pc[1 + c]) * cell;
                const double cy = (static_cast<double>(row) + pc[2 + c]) * cell;
                const double hw = 0.5 * cell * std::exp(std::clamp(pc[3 + c], -10.0, 10.0));
                const double hh = 0.5 * cell * std::exp(std::clamp(pc[4 + c], -10.0, 10.0));
                BBox box{std::clamp(cx - hw, 0.0, image_size), std::clamp(cy - hh, 0.0, image_size),
                         std::clamp(cx + hw, 0.0, image_size), std::clamp(cy + hh, 0.0, image_size)};
                dets.push_back({first_image_id + b, best, objectness * class_prob, box});
            }
        }
    }
    return dets;
}

}  // namespace dbf
