/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string_view>

#include "tgan/colorkit.hpp"
#include "tgan/image.hpp"

/// Procedural textures and toy product photos for tests, benchmarks and
/// smoke runs without a photo collection.
namespace tgan::synthetic {

enum class Pattern { stripes, dots, checkers };

Pattern parse_pattern(std::string_view s);
std::string_view to_string(Pattern p);

struct PatternParams {
    Pattern kind = Pattern::stripes;
    /// Repeat length in pixels.
    double period = 8.0;
    /// Orientation in radians.
    double angle = 0.0;
    /// Offsets in units of one period.
    double phase_u = 0.0;
    double phase_v = 0.0;
    /// Ink fraction of a period (stripe width, dot diameter).
    double duty = 0.5;
    colorkit::Rgb ink{0.1, 0.1, 0.1};
    colorkit::Rgb paper{0.85, 0.85, 0.85};
};

struct PatternRange {
    double min_period = 5.0;
    double max_period = 14.0;
};

/// Random parameters; `kind` fixes the pattern family when given.
PatternParams random_pattern(std::mt19937_64& rng, std::optional<Pattern> kind = std::nullopt,
                             const PatternRange& range = {});

/// Same parameters except for a fresh random phase.
PatternParams rephase(const PatternParams& p, std::mt19937_64& rng);

/// True when two parameter sets describe visibly different textures: another
/// family, or a period ratio above 1.4, or an orientation gap above 30 degrees.
bool patterns_distinct(const PatternParams& a, const PatternParams& b);

/// 2x2 supersampled rendering, values strictly inside (0,1).
RgbImage render_pattern(const PatternParams& p, int height, int width);

enum class Silhouette { ellipse, rounded_box, shirt };

struct ProductOptions {
    std::optional<Silhouette> shape;
    /// Pattern period range as fractions of the resolution.
    double min_period = 1.0 / 16.0;
    double max_period = 1.0 / 6.0;
};

/// Patterned object on a white background. The object never reaches the
/// white threshold used for foreground masking.
RgbImage product_photo(std::uint64_t seed, int resolution, const ProductOptions& options = {});

/// Writes <out>/photos/product-NNN.png and <out>/textures/texture-NNN.png.
void write_sample_collection(const std::filesystem::path& out, int photos, int textures, int resolution,
                             std::uint64_t seed);

}  // namespace tgan::synthetic
