#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>
#include <vector>

#include "flowsteer/image.hpp"

namespace test_util {

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("flowsteer_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Smooth analytic texture sampled at (x - dx, y - dy): the content moves by (dx, dy).
inline flowsteer::Frame smooth_pattern(std::size_t w, std::size_t h, double dx, double dy) {
    auto f = flowsteer::Frame::filled(w, h, 0, 0, 0);
    const double tau = 2 * std::numbers::pi;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double px = static_cast<double>(x) - dx, py = static_cast<double>(y) - dy;
            const double v = 0.5 + 0.2 * std::sin(tau * px / 37.0) * std::cos(tau * py / 29.0) +
                             0.15 * std::sin(tau * (px + 2 * py) / 47.0);
            for (std::size_t c = 0; c < 3; ++c) f.at(y, x, c) = v;
        }
    return f;
}

}  // namespace test_util
