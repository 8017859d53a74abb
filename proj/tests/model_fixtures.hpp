#pragma once

// Miniature model configs and weight helpers shared by the model, training
// and acceptance suites.

#include <functional>
#include <random>
#include <string>

#include "flowsteer/models.hpp"

namespace fixtures {

inline flowsteer::ModelConfig miniature(flowsteer::ModelKind kind, std::size_t seq_len = 2) {
    flowsteer::ModelConfig c;
    c.kind = kind;
    c.seq_len = seq_len;
    c.feature_dim = 8;
    c.heads = 4;
    c.encoder_layers = 2;
    c.ff_dim = 16;
    c.fused_dim = 4;
    c.lstm_hidden = 4;
    c.lstm_layers = 2;
    c.backbone_channels = {4};
    c.stem_kernel = 3;
    c.stem_stride = 1;
    c.image_h = 8;
    c.image_w = 8;
    c.predict_speed = kind == flowsteer::ModelKind::dual_transformer;
    c.init_seed = 7;
    if (kind == flowsteer::ModelKind::dave2) {
        // smallest extent the five valid convs accept
        c.image_h = 61;
        c.image_w = 61;
    }
    return c;
}

inline flowsteer::Tensor random_frames(std::size_t n, std::size_t h, std::size_t w, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(n * 3 * h * w);
    for (auto& x : v) x = dist(rng);
    return flowsteer::Tensor::from({n, 3, h, w}, std::move(v));
}

inline void fill_params(flowsteer::Model& model, const std::function<bool(const std::string&)>& select,
                        double value) {
    for (const auto& [name, t] : model.parameters().entries()) {
        if (!select(name)) continue;
        flowsteer::Tensor p = t;
        for (auto& x : p.mutable_data()) x = value;
    }
}

inline bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace fixtures
