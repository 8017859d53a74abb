#pragma once

#include <cstdint>
#include <random>
#include <utility>

#include "flowsteer/image.hpp"

namespace flowsteer {

/// Weak photometric and geometric augmentations. Every magnitude is drawn
/// independently per call.
struct AugmentPolicy {
    double brightness_min = 0.6;  // multiplicative factor on the HSV value channel
    double brightness_max = 1.4;
    double shadow_prob = 0.5;
    double shadow_dim = 0.5;
    int translate_px = 10;  // max |shift| on each axis
    double rotate_deg = 5.0;
    int blur_kernel = 3;  // odd box size; 1 disables
    double blur_prob = 0.5;
    std::uint64_t seed = 0;
    // Translation normally leaves the label unchanged; when set, each pixel of
    // horizontal shift adds label_per_px radians.
    bool adjust_label_on_translate = false;
    double label_per_px = 0.004;

    void validate() const;
};

/// One concrete set of augmentation magnitudes.
struct AugmentDraw {
    double brightness = 1.0;
    bool shadow = false;
    double chord_x0 = 0, chord_y0 = 0, chord_x1 = 0, chord_y1 = 0;  // pixel coordinates
    bool shadow_left = true;
    double shadow_dim = 0.5;
    int dx = 0;
    int dy = 0;
    double rotate_deg = 0.0;
    bool blur = false;
    int blur_kernel = 1;
};

AugmentDraw draw_augmentation(const AugmentPolicy& policy, std::size_t width, std::size_t height,
                              std::mt19937_64& rng);

/// Applies the draw in order: brightness, shadow, translation, rotation, blur.
Frame apply_augmentation(const Frame& frame, const AugmentDraw& draw);

std::pair<Frame, double> augment(const Frame& frame, double label_angle, const AugmentPolicy& policy,
                                 std::mt19937_64& rng);

// Individual stages, exposed for previews and tests.
Frame scale_brightness(const Frame& frame, double factor);
Frame translate(const Frame& frame, int dx, int dy);
Frame rotate(const Frame& frame, double degrees);
Frame box_blur(const Frame& frame, int kernel);

}  // namespace flowsteer
