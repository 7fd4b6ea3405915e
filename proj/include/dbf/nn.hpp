#pragma once

// Layers and the backbone / neck / head detector.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dbf/autodiff.hpp"
#include "dbf/eval.hpp"
#include "dbf/schedule.hpp"
#include "dbf/tensor.hpp"

namespace dbf {

enum class LayerKind : std::uint8_t { dense, conv2d, relu, maxpool2d, flatten };
enum class Group : std::uint8_t { backbone, neck, head };

std::string_view layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);
std::string_view group_name(Group group);

// Hyperparameters of one layer. `in`/`out` are feature sizes for dense and
// channel counts for conv2d; `kernel`/`stride` are used by conv2d and
// maxpool2d, `padding` by conv2d only.
struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t kernel = 0;
    std::size_t stride = 1;
    std::size_t padding = 0;

    static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::dense, in, out, 0, 1, 0}; }
    static LayerSpec conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1,
                          std::size_t padding = 0) {
        return {LayerKind::conv2d, in, out, kernel, stride, padding};
    }
    static LayerSpec relu() { return {LayerKind::relu, 0, 0, 0, 1, 0}; }
    static LayerSpec maxpool(std::size_t kernel, std::size_t stride) {
        return {LayerKind::maxpool2d, 0, 0, kernel, stride, 0};
    }
    static LayerSpec flatten() { return {LayerKind::flatten, 0, 0, 0, 1, 0}; }

    std::string describe() const;
};

// Per-sample output shape of `spec` applied to a per-sample `input` shape.
// Throws ShapeError when the layer cannot consume `input`.
Shape layer_output_shape(const LayerSpec& spec, const Shape& input);

struct ArchConfig {
    Shape input_shape{1, 32, 32};  // per sample, [C, H, W]
    std::vector<LayerSpec> backbone;
    std::optional<std::vector<LayerSpec>> neck;
    std::vector<LayerSpec> head;
    std::size_t grid_size = 4;
    std::size_t num_classes = 3;

    // Channels per grid cell: objectness, class logits, 4 box offsets.
    std::size_t cell_channels() const { return 1 + num_classes + 4; }

    // conv -> relu -> pool x3 backbone, 3x3 conv neck, 1x1 conv head (one
    // prediction per grid cell). The head may also end in a dense layer of
    // S*S*(1+C+4) outputs, read as row-major cells.
    static ArchConfig desk_default(std::size_t image_size = 32, std::size_t num_classes = 3);
    // Same backbone with a flatten -> dense neck and a dense head.
    static ArchConfig dense_head(std::size_t image_size = 32, std::size_t num_classes = 3);
};

struct Layer {
    std::size_t layer_id = 0;
    Group group = Group::backbone;
    LayerSpec spec;
    Shape input_shape;  // per sample
    Shape output_shape;  // per sample
    std::vector<ParamId> params;  // weight, then bias
};

struct Parameter {
    ParamId id = 0;
    std::size_t layer_id = 0;
    std::string name;  // "weight" or "bias"
    Tensor value;
};

// Model output: shape [batch, S, S, 1 + C + 4]. Per cell: objectness logit,
// C class logits, then (dx, dy) of the box centre inside the cell and
// (log w, log h) relative to the cell size.
struct PredictionGrid {
    Tensor values;
    std::size_t grid_size = 0;
    std::size_t num_classes = 0;

    std::size_t batch() const { return values.shape()[0]; }
};

struct ForwardOptions {
    // With freeze = 1 the backbone runs without recording on the tape; its
    // output would be detached anyway, so gradients are unchanged. Disable to
    // record the backbone and rely on detach alone.
    bool skip_frozen_recording = true;
};

class Detector {
public:
    const ArchConfig& arch() const { return arch_; }
    const std::vector<Layer>& layers() const { return layers_; }
    const std::vector<Parameter>& parameters() const { return params_; }
    std::vector<Parameter>& parameters() { return params_; }
    const Parameter& parameter(ParamId id) const { return params_.at(id); }

    Group group_of(std::size_t layer_id) const { return layers_.at(layer_id).group; }

    // Partition of all parameter ids by group, in construction order.
    std::map<Group, std::vector<ParamId>> parameter_groups() const;

    // Parameters of the given group; backbone parameters come first in
    // parameters(), so each group is a contiguous range.
    std::span<Parameter> group_parameters(Group group);
    std::span<const Parameter> group_parameters(Group group) const;

    // True when every parameter has the same bit pattern.
    bool bit_equal(const Detector& other) const;

    // FNV-1a over the bit patterns of the given group's parameters.
    std::uint64_t checksum(Group group) const;

private:
    friend Detector build_detector(const ArchConfig& arch, std::uint64_t init_seed);

    ArchConfig arch_;
    std::vector<Layer> layers_;
    std::vector<Parameter> params_;
};

// Validates the shape chain and initialises weights uniformly in
// [-a, a], a = sqrt(6 / (fan_in + fan_out)); biases start at zero.
Detector build_detector(const ArchConfig& arch, std::uint64_t init_seed);

// Runs backbone, then detach when frozen, then neck (if any) and head. With a
// tape, trainable parameters are watched so backward() can reach them; with no
// tape the pass is pure inference.
PredictionGrid detector_forward(const Detector& d, const Tensor& batch, FreezeSignal freeze, Tape* tape,
                                const ForwardOptions& options = {});

// Target grid with the same layout as PredictionGrid; objectness is 1 on the
// cell containing a box centre (the first box wins a shared cell), class
// channels are one-hot, and box channels hold the encoded offsets.
Tensor encode_targets(std::span<const std::vector<GroundTruth>> per_image, std::size_t grid_size,
                      std::size_t num_classes, double image_size);

// Mean BCE over all cells for objectness + mean cross-entropy over positive
// cells + mean (over positive cells) of the summed squared box-offset error.
Tensor detection_loss(const PredictionGrid& pred, const Tensor& targets);

// Turns a prediction grid into detections: one per cell whose objectness
// probability exceeds 0.5, scored objectness * max class probability.
std::vector<Detection> decode_predictions(const PredictionGrid& pred, double image_size,
                                          std::size_t first_image_id = 0);

// Versioned binary checkpoint; see README for the byte layout.
void save_checkpoint(const Detector& d, std::ostream& out);
void save_checkpoint(const Detector& d, const std::filesystem::path& path);
// Overwrites the parameters of `d`; layer ids, names and shapes must match.
void load_checkpoint(Detector& d, std::istream& in);
void load_checkpoint(Detector& d, const std::filesystem::path& path);

}  // namespace dbf
