#pragma once

// Small labelled image/graph samples for training-loop tests.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "histofuse/model.hpp"
#include "histofuse/pipeline.hpp"

namespace toy {

inline constexpr std::size_t kSide = 8;
inline constexpr std::size_t kGraphFeatures = 4;

// Label 1 brightens the upper half of the image and shifts the third node
// feature; everything else is noise. Two patches per patient.
inline std::vector<histofuse::Sample> samples(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.3);
    std::uniform_real_distribution<double> coord(0.0, 64.0);
    std::vector<histofuse::Sample> out;
    for (std::size_t s = 0; s < n; ++s) {
        histofuse::Sample x;
        x.label = static_cast<int>(s % 2);
        x.patch_id = "patch" + std::to_string(s);
        x.patient_id = "patient" + std::to_string(s / 4 * 2 + s % 2);
        x.height = x.width = kSide;
        for (std::size_t r = 0; r < kSide; ++r)
            for (std::size_t c = 0; c < kSide; ++c)
                x.image.push_back(0.5 + (x.label == 1 && r < kSide / 2 ? 0.4 : 0.0) + 0.1 * noise(rng));
        const std::size_t nodes = 3 + s % 4;
        x.graph.nodes = nodes;
        x.graph.features = kGraphFeatures;
        for (std::size_t v = 0; v < nodes; ++v) {
            x.graph.x.push_back(coord(rng));
            x.graph.x.push_back(coord(rng));
            x.graph.x.push_back(x.label + noise(rng));
            x.graph.x.push_back(noise(rng));
        }
        for (std::size_t v = 0; v + 1 < nodes; ++v) x.graph.edges.push_back({v, v + 1, 1.0 + 0.1 * v});
        out.push_back(std::move(x));
    }
    return out;
}

inline histofuse::ModelConfig model_config(std::uint64_t seed) {
    histofuse::ModelConfig m;
    histofuse::CnnConfig cnn;
    cnn.kind = histofuse::CnnKind::residual;
    cnn.width = 4;
    cnn.blocks = 1;
    cnn.out = 8;
    m.cnns.push_back(cnn);
    histofuse::GnnConfig gnn;
    gnn.in_features = kGraphFeatures;
    gnn.hidden = 8;
    gnn.out = 4;
    m.gnns.push_back(gnn);
    m.fusion.mode = histofuse::FusionMode::mlp;
    m.fusion.mlp_width = 16;
    m.fusion.dropout = 0.0;
    m.seed = seed;
    return m;
}

}  // namespace toy
