/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <array>
#include <cstddef>

#include "tgan/autograd.hpp"
#include "tgan/image.hpp"

/// sRGB (D65) <-> CIE Lab conversion and the L-to-grayscale replication used
/// to feed Lab lightness into RGB feature networks.
namespace tgan::colorkit {

struct Rgb {
    double r = 0, g = 0, b = 0;
};

struct Lab {
    double L = 0, a = 0, b = 0;
};

/// Per-pixel conversion; input channels in [0,1].
Lab srgb_to_lab(Rgb c);
/// Per-pixel inverse without clamping (may leave [0,1] for out-of-gamut Lab).
Rgb lab_to_srgb_unclamped(Lab c);

/// Converts a validated sRGB image. Throws ValidationError on non-finite or
/// out-of-range input.
LabImage rgb_to_lab(const RgbImage& img);

struct RgbConversion {
    RgbImage image;
    /// Number of channel values that fell outside [0,1] and were clamped.
    std::size_t clamped = 0;
};

RgbConversion lab_to_rgb(const LabImage& img);

/// Three identical channels, each L/100.
struct GrayTriple {
    std::array<Plane<float>, 3> channels;
};

GrayTriple l_to_gray3(const Plane<float>& L);

/// Differentiable replication of a lightness map (N,1,H,W) -> (N,3,H,W).
/// Backward returns the mean of the three channel gradients, not their sum.
ag::Var replicate_gray(const ag::Var& lightness);

}  // namespace tgan::colorkit
