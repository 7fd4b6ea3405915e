#include <array>
#include <cmath>
#include <cstring>
#include <string>

#include "dbf/errors.hpp"
#include "dbf/nn.hpp"
#include "dbf/rng.hpp"

namespace dbf {

namespace {

constexpr std::array<std::string_view, 5> kLayerNames = {"dense", "conv2d", "relu", "maxpool2d", "flatten"};
constexpr std::array<std::string_view, 3> kGroupNames = {"backbone", "neck", "head"};

std::string where(Group g, std::size_t index, const LayerSpec& spec) {
    return std::string(group_name(g)) + "[" + std::to_string(index) + "] (" + spec.describe() + ")";
}

}  // namespace

std::string_view layer_kind_name(LayerKind kind) { return kLayerNames[static_cast<std::size_t>(kind)]; }

LayerKind parse_layer_kind(std::string_view name) {
    for (std::size_t i = 0; i < kLayerNames.size(); ++i) {
        if (kLayerNames[i] == name) return static_cast<LayerKind>(i);
    }
    throw ConfigError("unknown layer type '" + std::string(name) + "'");
}

std::string_view group_name(Group group) { return kGroupNames[static_cast<std::size_t>(group)]; }

std::string LayerSpec::describe() const {
    switch (kind) {
        case LayerKind::dense: return "dense " + std::to_string(in) + "->" + std::to_string(out);
        case LayerKind::conv2d:
            return "conv2d " + std::to_string(in) + "->" + std::to_string(out) + " k" + std::to_string(kernel) + " s" +
                   std::to_string(stride) + " p" + std::to_string(padding);
        case LayerKind::maxpool2d: return "maxpool2d k" + std::to_string(kernel) + " s" + std::to_string(stride);
        case LayerKind::relu: return "relu";
        case LayerKind::flatten: return "flatten";
    }
    return "?";
}

Shape layer_output_shape(const LayerSpec& spec, const Shape& input) {
    switch (spec.kind) {
        case LayerKind::dense:
            if (spec.in == 0 || spec.out == 0) throw ShapeError("dense layer needs positive in/out sizes");
            if (input != Shape{spec.in}) {
                throw ShapeError(spec.describe() + " expects input [" + std::to_string(spec.in) + "], got " +
                                 shape_string(input));
            }
            return {spec.out};
        case LayerKind::conv2d: {
            if (spec.in == 0 || spec.out == 0 || spec.kernel == 0 || spec.stride == 0) {
                throw ShapeError(spec.describe() + ": channels, kernel and stride must be >= 1");
            }
            if (input.size() != 3 || input[0] != spec.in) {
                throw ShapeError(spec.describe() + " expects input [" + std::to_string(spec.in) + ", H, W], got " +
                                 shape_string(input));
            }
            const std::size_t h = input[1] + 2 * spec.padding, w = input[2] + 2 * spec.padding;
            if (h < spec.kernel || w < spec.kernel) {
                throw ShapeError(spec.describe() + ": kernel larger than input " + shape_string(input));
            }
            return {spec.out, (h - spec.kernel) / spec.stride + 1, (w - spec.kernel) / spec.stride + 1};
        }
        case LayerKind::maxpool2d:
            if (spec.kernel == 0 || spec.stride == 0) throw ShapeError("maxpool2d: kernel and stride must be >= 1");
            if (input.size() != 3 || input[1] < spec.kernel || input[2] < spec.kernel) {
                throw ShapeError(spec.describe() + " cannot pool input " + shape_string(input));
            }
            return {input[0], (input[1] - spec.kernel) / spec.stride + 1, (input[2] - spec.kernel) / spec.stride + 1};
        case LayerKind::relu: return input;
        case LayerKind::flatten: return {element_count(input)};
    }
    throw ShapeError("unknown layer kind");
}

namespace {

ArchConfig desk_backbone(std::size_t image_size, std::size_t num_classes) {
    ArchConfig a;
    a.input_shape = {1, image_size, image_size};
    a.num_classes = num_classes;
    a.grid_size = image_size / 8;
    a.backbone = {
        LayerSpec::conv(1, 8, 3, 1, 1),  LayerSpec::relu(), LayerSpec::maxpool(2, 2),
        LayerSpec::conv(8, 16, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
        LayerSpec::conv(16, 16, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
    };
    return a;
}

}  // namespace

ArchConfig ArchConfig::desk_default(std::size_t image_size, std::size_t num_classes) {
    ArchConfig a = desk_backbone(image_size, num_classes);
    a.neck = std::vector<LayerSpec>{LayerSpec::conv(16, 32, 3, 1, 1), LayerSpec::relu()};
    a.head = {LayerSpec::conv(32, a.cell_channels(), 1)};
    return a;
}

ArchConfig ArchConfig::dense_head(std::size_t image_size, std::size_t num_classes) {
    ArchConfig a = desk_backbone(image_size, num_classes);
    const std::size_t features = 16 * a.grid_size * a.grid_size;
    a.neck = std::vector<LayerSpec>{LayerSpec::flatten(), LayerSpec::dense(features, 64), LayerSpec::relu()};
    a.head = {LayerSpec::dense(64, a.grid_size * a.grid_size * a.cell_channels())};
    return a;
}

std::map<Group, std::vector<ParamId>> Detector::parameter_groups() const {
    std::map<Group, std::vector<ParamId>> groups{{Group::backbone, {}}, {Group::neck, {}}, {Group::head, {}}};
    for (const Parameter& p : params_) groups[layers_[p.layer_id].group].push_back(p.id);
    return groups;
}

std::span<Parameter> Detector::group_parameters(Group group) {
    std::size_t first = params_.size(), last = 0;
    for (const Parameter& p : params_) {
        if (layers_[p.layer_id].group != group) continue;
        first = std::min(first, p.id);
        last = std::max(last, p.id + 1);
    }
    if (first >= last) return {};
    return std::span<Parameter>(params_).subspan(first, last - first);
}

std::span<const Parameter> Detector::group_parameters(Group group) const {
    return const_cast<Detector*>(this)->group_parameters(group);
}

bool Detector::bit_equal(const Detector& other) const {
    if (params_.size() != other.params_.size()) return false;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!params_[i].value.bit_equal(other.params_[i].value)) return false;
    }
    return true;
}

std::uint64_t Detector::checksum(Group group) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const Parameter& p : group_parameters(group)) {
        for (double v : p.value.values()) {
            unsigned char bytes[sizeof(double)];
            std::memcpy(bytes, &v, sizeof v);
            for (unsigned char b : bytes) {
                h ^= b;
                h *= 0x100000001b3ULL;
            }
        }
    }
    return h;
}

Detector build_detector(const ArchConfig& arch, std::uint64_t init_seed) {
    if (arch.num_classes == 0) throw ConfigError("arch.num_classes must be >= 1");
    if (arch.grid_size == 0) throw ConfigError("arch.grid_size must be >= 1");
    if (arch.backbone.empty()) throw ConfigError("arch.backbone must contain at least one layer");
    if (arch.head.empty()) throw ConfigError("arch.head must contain at least one layer");

    Detector d;
    d.arch_ = arch;

    Shape shape = arch.input_shape;
    std::optional<std::string> previous;
    auto add_group = [&](Group g, const std::vector<LayerSpec>& specs) {
        for (std::size_t i = 0; i < specs.size(); ++i) {
            const LayerSpec& spec = specs[i];
            Layer layer;
            layer.layer_id = d.layers_.size();
            layer.group = g;
            layer.spec = spec;
            layer.input_shape = shape;
            try {
                layer.output_shape = layer_output_shape(spec, shape);
            } catch (const ShapeError& e) {
                throw ShapeError("shape chain broken between " + previous.value_or("input " + shape_string(shape)) +
                                 " and " + where(g, i, spec) + ": " + e.what());
            }
            shape = layer.output_shape;
            previous = where(g, i, spec);

            Shape weight_shape, bias_shape;
            double fan_in = 0, fan_out = 0;
            if (spec.kind == LayerKind::dense) {
                weight_shape = {spec.in, spec.out};
                fan_in = static_cast<double>(spec.in);
                fan_out = static_cast<double>(spec.out);
            } else if (spec.kind == LayerKind::conv2d) {
                weight_shape = {spec.out, spec.in, spec.kernel, spec.kernel};
                const auto area = static_cast<double>(spec.kernel * spec.kernel);
                fan_in = static_cast<double>(spec.in) * area;
                fan_out = static_cast<double>(spec.out) * area;
            }
            if (!weight_shape.empty()) {
                const double bound = std::sqrt(6.0 / (fan_in + fan_out));
                const ParamId wid = d.params_.size();
                KeyedStream rng(derive_key(init_seed, wid, 0x77));
                std::vector<double> w(element_count(weight_shape));
                for (double& v : w) v = rng.uniform(-bound, bound);
                d.params_.push_back({wid, layer.layer_id, "weight", Tensor(weight_shape, std::move(w))});
                layer.params.push_back(wid);

                const ParamId bid = d.params_.size();
                d.params_.push_back({bid, layer.layer_id, "bias", Tensor::zeros({spec.out})});
                layer.params.push_back(bid);
            }
            d.layers_.push_back(std::move(layer));
        }
    };

    add_group(Group::backbone, arch.backbone);
    if (arch.neck) add_group(Group::neck, *arch.neck);
    add_group(Group::head, arch.head);

    const std::size_t s = arch.grid_size, k = arch.cell_channels();
    if (shape != Shape{s * s * k} && shape != Shape{k, s, s}) {
        throw ShapeError("head output " + shape_string(shape) + " does not match the prediction grid: expected [" +
                         std::to_string(s * s * k) + "] (dense) or [" + std::to_string(k) + ", " + std::to_string(s) +
                         ", " + std::to_string(s) + "] (conv), S*S*(1+C+4)");
    }
    return d;
}

namespace {

Tensor run_layer(const Layer& layer, const Tensor& x, std::span<const Tensor> params) {
    const LayerSpec& s = layer.spec;
    switch (s.kind) {
        case LayerKind::dense: return ops::add(ops::matmul(x, params[0]), params[1]);
        case LayerKind::conv2d: return ops::conv2d(x, params[0], params[1], s.stride, s.padding);
        case LayerKind::relu: return ops::relu(x);
        case LayerKind::maxpool2d: return ops::maxpool2d(x, s.kernel, s.stride);
        case LayerKind::flatten: return ops::flatten(x);
    }
    throw ShapeError("unknown layer kind");
}

Tensor run_group(const Detector& d, Group g, Tensor x, Tape* tape) {
    for (const Layer& layer : d.layers()) {
        if (layer.group != g) continue;
        std::vector<Tensor> params;
        for (ParamId id : layer.params) {
            const Tensor& value = d.parameter(id).value;
            params.push_back(tape ? tape->watch(value, id) : value);
        }
        x = run_layer(layer, x, params);
    }
    return x;
}

}  // namespace

PredictionGrid detector_forward(const Detector& d, const Tensor& batch, FreezeSignal freeze, Tape* tape,
                                const ForwardOptions& options) {
    const ArchConfig& arch = d.arch();
    Shape expected{batch.rank() > 0 ? batch.shape()[0] : 0};
    expected.insert(expected.end(), arch.input_shape.begin(), arch.input_shape.end());
    if (batch.shape() != expected) {
        throw ShapeError("detector input must be [N, " + shape_string(arch.input_shape).substr(1) + ", got " +
                         shape_string(batch.shape()));
    }

    const bool frozen = freeze == FreezeSignal::frozen;
    Tape* backbone_tape = frozen && options.skip_frozen_recording ? nullptr : tape;
    Tensor out = run_group(d, Group::backbone, batch, backbone_tape);
    if (frozen) out = detach(out);
    if (arch.neck) out = run_group(d, Group::neck, out, tape);
    out = run_group(d, Group::head, out, tape);

    const std::size_t n = batch.shape()[0];
    const std::size_t s = arch.grid_size;
    // A conv head emits [N, K, S, S]; a dense head emits cells row-major.
    Tensor grid = out.rank() == 4 ? ops::channels_last(out) : ops::reshape(out, {n, s, s, arch.cell_channels()});
    return PredictionGrid{std::move(grid), s, arch.num_classes};
}

}  // namespace dbf
