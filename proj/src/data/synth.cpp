#include "dbf/synth.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>

#include "dbf/errors.hpp"
#include "dbf/rng.hpp"

namespace dbf {

namespace {

// Stream ids within one scene.
enum Field : std::uint64_t { kCount = 1, kBackground = 2, kNoise = 3, kObject = 16 };

double pattern_value(std::size_t class_id, std::size_t dx, std::size_t dy) {
    switch (class_id % 4) {
        case 0: return 0.9;
        case 1: return (dy / 2) % 2 == 0 ? 0.95 : 0.45;
        case 2: return (dx / 2) % 2 == 0 ? 0.95 : 0.45;
        default: return ((dx / 2) + (dy / 2)) % 2 == 0 ? 0.95 : 0.35;
    }
}

bool overlaps(const BBox& a, const BBox& b) {
    return a.xmin < b.xmax && b.xmin < a.xmax && a.ymin < b.ymax && b.ymin < a.ymax;
}

void put_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}

}  // namespace

void SceneConfig::validate() const {
    if (image_size == 0) throw ConfigError("data.image_size must be >= 1");
    if (num_classes == 0) throw ConfigError("data.num_classes must be >= 1");
    if (min_objects > max_objects) throw ConfigError("data.min_objects exceeds data.max_objects");
    if (min_object_size == 0 || min_object_size > max_object_size) {
        throw ConfigError("data object sizes must satisfy 1 <= min_object_size <= max_object_size");
    }
    if (max_object_size > image_size) {
        throw ConfigError("data.max_object_size " + std::to_string(max_object_size) + " does not fit in a " +
                          std::to_string(image_size) + "px image");
    }
    if (!(noise_std >= 0.0)) throw ConfigError("data.noise_std must be >= 0");
}

Scene generate_scene(const SceneConfig& cfg, std::uint64_t index) {
    cfg.validate();
    const std::size_t n = cfg.image_size;

    KeyedStream bg(derive_key(cfg.seed, index, kBackground));
    const double base = bg.uniform(0.05, 0.2);
    std::vector<double> pixels(n * n, base);

    KeyedStream count_rng(derive_key(cfg.seed, index, kCount));
    const std::size_t k = cfg.min_objects + count_rng.below(cfg.max_objects - cfg.min_objects + 1);

    Scene scene;
    for (std::size_t obj = 0; obj < k; ++obj) {
        KeyedStream rng(derive_key(cfg.seed, index, kObject + obj));
        const std::size_t class_id = rng.below(cfg.num_classes);
        // Rejection sampling keeps objects disjoint; a crowded scene drops the object.
        for (int attempt = 0; attempt < 32; ++attempt) {
            const std::size_t span = cfg.max_object_size - cfg.min_object_size + 1;
            const std::size_t w = cfg.min_object_size + rng.below(span);
            const std::size_t h = cfg.min_object_size + rng.below(span);
            const std::size_t x0 = rng.below(n - w + 1);
            const std::size_t y0 = rng.below(n - h + 1);
            const BBox box{static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x0 + w),
                           static_cast<double>(y0 + h)};
            const bool clash = std::any_of(scene.ground_truths.begin(), scene.ground_truths.end(),
                                           [&](const GroundTruth& g) { return overlaps(g.box, box); });
            if (clash) continue;
            for (std::size_t y = y0; y < y0 + h; ++y) {
                for (std::size_t x = x0; x < x0 + w; ++x) pixels[y * n + x] = pattern_value(class_id, x - x0, y - y0);
            }
            scene.ground_truths.push_back({static_cast<std::size_t>(index), class_id, box});
            break;
        }
    }

    // Uniform noise with the configured standard deviation.
    KeyedStream noise(derive_key(cfg.seed, index, kNoise));
    const double half_width = cfg.noise_std * std::sqrt(3.0);
    for (double& p : pixels) p = std::clamp(p + noise.uniform(-half_width, half_width), 0.0, 1.0);

    scene.image = Tensor({1, n, n}, std::move(pixels));
    return scene;
}

Dataset generate_dataset(const SceneConfig& cfg, std::size_t n_train, std::size_t n_val) {
    cfg.validate();
    Dataset ds;
    ds.train.reserve(n_train);
    ds.val.reserve(n_val);
    for (std::size_t i = 0; i < n_train; ++i) ds.train.push_back(generate_scene(cfg, i));
    for (std::size_t i = 0; i < n_val; ++i) ds.val.push_back(generate_scene(cfg, n_train + i));
    return ds;
}

void dump_dataset(const std::vector<Scene>& scenes, std::size_t first_image_id, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const std::filesystem::path bin = dir / "images.bin";
    std::ofstream out(bin, std::ios::binary);
    if (!out) throw IoError("cannot open '" + bin.string() + "' for writing");
    const std::size_t h = scenes.empty() ? 0 : scenes.front().image.shape()[1];
    const std::size_t w = scenes.empty() ? 0 : scenes.front().image.shape()[2];
    put_u64(out, scenes.size());
    put_u64(out, h);
    put_u64(out, w);
    std::vector<GroundTruth> gts;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        for (double v : scenes[i].image.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
        for (GroundTruth g : scenes[i].ground_truths) {
            g.image_id = first_image_id + i;
            gts.push_back(g);
        }
    }
    if (!out) throw IoError("write failed for '" + bin.string() + "'");
    write_ground_truths_csv(dir / "ground_truth.csv", gts);
}

}  // namespace dbf
