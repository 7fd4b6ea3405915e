#pragma once

// Deterministic miniature detection scenes.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "dbf/eval.hpp"
#include "dbf/tensor.hpp"

namespace dbf {

struct SceneConfig {
    std::size_t image_size = 32;
    std::size_t num_classes = 3;
    std::size_t min_objects = 1;
    std::size_t max_objects = 3;
    std::size_t min_object_size = 6;
    std::size_t max_object_size = 12;
    double noise_std = 0.05;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Scene {
    Tensor image;  // [1, H, W], values in [0, 1]
    std::vector<GroundTruth> ground_truths;
};

// Pure function of (cfg, index). Each class has its own fill pattern:
// solid, horizontal stripes, vertical stripes, checkerboard (cycling).
Scene generate_scene(const SceneConfig& cfg, std::uint64_t index);

struct Dataset {
    std::vector<Scene> train;  // indices [0, n_train)
    std::vector<Scene> val;    // indices [n_train, n_train + n_val)
};

Dataset generate_dataset(const SceneConfig& cfg, std::size_t n_train, std::size_t n_val);

// Writes <dir>/images.bin (u64 count, u64 H, u64 W, then count*H*W
// little-endian f64) and <dir>/ground_truth.csv in the detection CSV layout.
void dump_dataset(const std::vector<Scene>& scenes, std::size_t first_image_id, const std::filesystem::path& dir);

}  // namespace dbf
