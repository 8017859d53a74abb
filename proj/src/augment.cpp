#include "flowsteer/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "flowsteer/errors.hpp"

namespace flowsteer {

void AugmentPolicy::validate() const {
    if (!(brightness_min > 0.0) || brightness_max < brightness_min)
        throw ContractError("augment: brightness range must satisfy 0 < min <= max");
    if (shadow_prob < 0.0 || shadow_prob > 1.0) throw ContractError("augment: shadow_prob outside [0,1]");
    if (!(shadow_dim > 0.0 && shadow_dim < 1.0)) throw ContractError("augment: shadow_dim outside (0,1)");
    if (translate_px < 0 || translate_px > 10)
        throw ContractError("augment: translate_px must be within the weak regime [0,10]");
    if (rotate_deg < 0.0 || rotate_deg > 10.0) throw ContractError("augment: rotate_deg outside [0,10]");
    if (blur_kernel < 1 || blur_kernel % 2 == 0) throw ContractError("augment: blur_kernel must be odd and >= 1");
    if (blur_prob < 0.0 || blur_prob > 1.0) throw ContractError("augment: blur_prob outside [0,1]");
}

AugmentDraw draw_augmentation(const AugmentPolicy& policy, std::size_t width, std::size_t height,
                              std::mt19937_64& rng) {
    policy.validate();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    const double w = static_cast<double>(width), h = static_cast<double>(height);

    // A fixed number of draws per call keeps the stream aligned across policies.
    AugmentDraw d;
    d.brightness = between(policy.brightness_min, policy.brightness_max);
    d.shadow = unit(rng) < policy.shadow_prob;
    // Chord from a point on the top edge to a point on the bottom edge.
    d.chord_x0 = between(0.0, w);
    d.chord_y0 = 0.0;
    d.chord_x1 = between(0.0, w);
    d.chord_y1 = h;
    d.shadow_left = unit(rng) < 0.5;
    d.shadow_dim = policy.shadow_dim;
    const double span = static_cast<double>(policy.translate_px);
    d.dx = static_cast<int>(std::lround(between(-span, span)));
    d.dy = static_cast<int>(std::lround(between(-span, span)));
    d.rotate_deg = between(-policy.rotate_deg, policy.rotate_deg);
    d.blur = policy.blur_kernel > 1 && unit(rng) < policy.blur_prob;
    d.blur_kernel = policy.blur_kernel;
    return d;
}

Frame scale_brightness(const Frame& frame, double factor) {
    Frame out = frame;
    for (std::size_t i = 0; i < frame.width * frame.height; ++i) {
        double* px = out.pixels.data() + i * 3;
        Hsv hsv = rgb_to_hsv(px[0], px[1], px[2]);
        hsv.v = std::clamp(hsv.v * factor, 0.0, 1.0);
        hsv_to_rgb(hsv, px[0], px[1], px[2]);
    }
    out.clamp();
    return out;
}

Frame translate(const Frame& frame, int dx, int dy) {
    Frame out = frame;
    const auto w = static_cast<std::ptrdiff_t>(frame.width), h = static_cast<std::ptrdiff_t>(frame.height);
    for (std::ptrdiff_t y = 0; y < h; ++y) {
        const std::ptrdiff_t sy = std::clamp<std::ptrdiff_t>(y - dy, 0, h - 1);
        for (std::ptrdiff_t x = 0; x < w; ++x) {
            const std::ptrdiff_t sx = std::clamp<std::ptrdiff_t>(x - dx, 0, w - 1);
            for (std::size_t c = 0; c < 3; ++c)
                out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) =
                    frame.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), c);
        }
    }
    return out;
}

Frame rotate(const Frame& frame, double degrees) {
    Frame out = frame;
    const double theta = degrees * std::numbers::pi / 180.0;
    const double cs = std::cos(theta), sn = std::sin(theta);
    const double cx = 0.5 * static_cast<double>(frame.width - 1);
    const double cy = 0.5 * static_cast<double>(frame.height - 1);
    const double max_x = static_cast<double>(frame.width - 1), max_y = static_cast<double>(frame.height - 1);
    for (std::size_t y = 0; y < frame.height; ++y)
        for (std::size_t x = 0; x < frame.width; ++x) {
            // Inverse map: rotate the destination point back into the source.
            const double rx = static_cast<double>(x) - cx, ry = static_cast<double>(y) - cy;
            const double sx = std::clamp(cs * rx + sn * ry + cx, 0.0, max_x);
            const double sy = std::clamp(-sn * rx + cs * ry + cy, 0.0, max_y);
            const auto x0 = static_cast<std::size_t>(sx), y0 = static_cast<std::size_t>(sy);
            const std::size_t x1 = std::min(x0 + 1, frame.width - 1), y1 = std::min(y0 + 1, frame.height - 1);
            const double ax = sx - static_cast<double>(x0), ay = sy - static_cast<double>(y0);
            for (std::size_t c = 0; c < 3; ++c) {
                const double top = frame.at(y0, x0, c) * (1 - ax) + frame.at(y0, x1, c) * ax;
                const double bot = frame.at(y1, x0, c) * (1 - ax) + frame.at(y1, x1, c) * ax;
                out.at(y, x, c) = top * (1 - ay) + bot * ay;
            }
        }
    return out;
}

Frame box_blur(const Frame& frame, int kernel) {
    if (kernel <= 1) return frame;
    const int r = kernel / 2;
    Frame out = frame;
    const auto w = static_cast<int>(frame.width), h = static_cast<int>(frame.height);
    const double norm = 1.0 / static_cast<double>(kernel * kernel);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int j = -r; j <= r; ++j)
                    for (int i = -r; i <= r; ++i)
                        acc += frame.at(static_cast<std::size_t>(std::clamp(y + j, 0, h - 1)),
                                        static_cast<std::size_t>(std::clamp(x + i, 0, w - 1)), c);
                out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) = acc * norm;
            }
    return out;
}

Frame apply_augmentation(const Frame& frame, const AugmentDraw& draw) {
    Frame out = frame;
    if (draw.brightness != 1.0) out = scale_brightness(out, draw.brightness);
    if (draw.shadow) {
        const double ex = draw.chord_x1 - draw.chord_x0, ey = draw.chord_y1 - draw.chord_y0;
        for (std::size_t y = 0; y < out.height; ++y)
            for (std::size_t x = 0; x < out.width; ++x) {
                const double side = ex * (static_cast<double>(y) + 0.5 - draw.chord_y0) -
                                    ey * (static_cast<double>(x) + 0.5 - draw.chord_x0);
                if ((side > 0.0) == draw.shadow_left)
                    for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) *= draw.shadow_dim;
            }
    }
    if (draw.dx != 0 || draw.dy != 0) out = translate(out, draw.dx, draw.dy);
    if (draw.rotate_deg != 0.0) out = rotate(out, draw.rotate_deg);
    if (draw.blur) out = box_blur(out, draw.blur_kernel);
    out.clamp();
    return out;
}

std::pair<Frame, double> augment(const Frame& frame, double label_angle, const AugmentPolicy& policy,
                                 std::mt19937_64& rng) {
    const AugmentDraw draw = draw_augmentation(policy, frame.width, frame.height, rng);
    double label = label_angle;
    if (policy.adjust_label_on_translate) label += policy.label_per_px * draw.dx;
    return {apply_augmentation(frame, draw), label};
}

}  // namespace flowsteer
