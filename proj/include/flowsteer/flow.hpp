#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "flowsteer/image.hpp"

namespace flowsteer {

/// Per-pixel displacement in pixels/frame; u points right, v points down.
struct FlowField {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> u;
    std::vector<double> v;

    static FlowField zeros(std::size_t width, std::size_t height);
    static FlowField constant(std::size_t width, std::size_t height, double u, double v);
};

struct FlowParams {
    int levels = 3;
    int iters = 50;
    double alpha = 15.0;  // smoothness weight on the 0..255 intensity scale
    int warps = 3;        // linearization points per pyramid level
};

/// Coarse-to-fine Horn-Schunck with warping. Both frames are reduced to
/// luminance. Deterministic.
FlowField compute_dense_flow(const Frame& prev, const Frame& next, const FlowParams& params = {});

inline constexpr double kDefaultMagCap = 10.0;

/// Polar encoding: hue = atan2(v,u) in degrees, saturation 1,
/// value = min(|flow| / mag_cap, 1).
Frame encode_flow_hsv(const FlowField& flow, double mag_cap = kDefaultMagCap);

/// Pixelwise convex combination. Weights that do not sum to one are
/// renormalized (and a warning is written to stderr).
FlowField weighted_flow_average(std::span<const FlowField> flows, std::span<const double> weights);

/// w_j proportional to 0.5^j, j = 0 for the most recent field; sums to one.
std::vector<double> exponential_flow_weights(std::size_t k);

// ---- on-disk cache: magic "FSFL", u32 H, u32 W, fp32 u-plane, fp32 v-plane, little-endian ----

void write_flow_file(const FlowField& flow, const std::filesystem::path& path);
FlowField read_flow_file(const std::filesystem::path& path);

}  // namespace flowsteer
