#pragma once

// Randomized small detector architectures for property tests.

#include "dbf/nn.hpp"
#include "dbf/rng.hpp"

namespace dbf::testing {

// Input [c, h, h] with h in 4..8. Backbone: 1-2 conv(+relu) blocks with an
// optional maxpool. Neck: absent, conv+relu, or flatten+dense+relu. Head:
// 1x1 conv (conv neck or no neck) or dense.
inline ArchConfig random_arch(KeyedStream& rng) {
    auto pick = [&](std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); };
    ArchConfig a;
    a.num_classes = pick(1, 3);
    const std::size_t in_ch = pick(1, 2);
    std::size_t h = pick(4, 8), ch = in_ch;
    a.input_shape = {in_ch, h, h};

    const std::size_t blocks = pick(1, 2);
    for (std::size_t b = 0; b < blocks; ++b) {
        const std::size_t out = pick(1, 4);
        const std::size_t k = pick(1, 3);
        const std::size_t pad = k / 2;
        a.backbone.push_back(LayerSpec::conv(ch, out, k, 1, pad));
        a.backbone.push_back(LayerSpec::relu());
        h = h + 2 * pad - k + 1;
        ch = out;
        if (h >= 4 && rng.below(2)) {
            a.backbone.push_back(LayerSpec::maxpool(2, 2));
            h /= 2;
        }
    }
    a.grid_size = h;
    const std::size_t k_out = a.cell_channels();

    switch (rng.below(3)) {
        case 0:
            a.head = {LayerSpec::conv(ch, k_out, 1)};
            break;
        case 1: {
            const std::size_t mid = pick(2, 6);
            a.neck = std::vector<LayerSpec>{LayerSpec::conv(ch, mid, 3, 1, 1), LayerSpec::relu()};
            a.head = {LayerSpec::conv(mid, k_out, 1)};
            break;
        }
        default: {
            const std::size_t mid = pick(2, 8);
            a.neck = std::vector<LayerSpec>{LayerSpec::flatten(), LayerSpec::dense(ch * h * h, mid), LayerSpec::relu()};
            a.head = {LayerSpec::dense(mid, h * h * k_out)};
            break;
        }
    }
    return a;
}

}  // namespace dbf::testing
