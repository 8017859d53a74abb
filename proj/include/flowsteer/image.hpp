#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "flowsteer/tensor.hpp"

namespace flowsteer {

/// RGB raster, channel values in [0,1], stored interleaved row-major (y, x, c).
struct Frame {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> pixels;
    std::int64_t timestamp_ns = 0;

    static Frame filled(std::size_t width, std::size_t height, double r, double g, double b);

    double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
    double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }
    bool same_size(const Frame& other) const { return width == other.width && height == other.height; }
    void clamp();
};

// ---- PPM (binary P6, maxval 255) ----

Frame decode_ppm(std::span<const std::uint8_t> bytes);
/// Canonical encoding: "P6\n<w> <h>\n255\n" followed by round(clamp(v)*255) bytes.
std::vector<std::uint8_t> encode_ppm(const Frame& frame);
Frame read_ppm(const std::filesystem::path& path);
void write_ppm(const Frame& frame, const std::filesystem::path& path);

// ---- colour ----

struct Hsv {
    double h;  // degrees, [0,360)
    double s;
    double v;
};
Hsv rgb_to_hsv(double r, double g, double b);
void hsv_to_rgb(const Hsv& hsv, double& r, double& g, double& b);

// ---- resampling and conversion ----

/// Bilinear resize with half-pixel centres (align_corners = false).
Frame resize_bilinear(const Frame& frame, std::size_t out_h, std::size_t out_w);

/// Rec. 601 luma in [0,1], one value per pixel.
std::vector<double> luminance(const Frame& frame);

/// Planar [3,H,W] tensor copy of the frame.
Tensor to_tensor(const Frame& frame);

}  // namespace flowsteer
