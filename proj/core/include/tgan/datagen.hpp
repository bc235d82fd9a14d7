/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tgan/errors.hpp"
#include "tgan/image.hpp"
#include "tgan/tensor.hpp"

/// Training-pair synthesis: foreground masks, sketches, patch placements and
/// the five-channel conditioning stack.
namespace tgan::datagen {

/// Color channel value outside color placements (outside the valid ab range).
inline constexpr float kColorSentinel = -200.0f;

struct SegmentationMask {
    BinaryMap mask;

    [[nodiscard]] int height() const { return mask.height; }
    [[nodiscard]] int width() const { return mask.width; }
    [[nodiscard]] std::size_t foreground() const;
    [[nodiscard]] double coverage() const;
};

struct PatchPlacement {
    Rect rect;
    /// Fraction of the rectangle covered by foreground.
    double overlap = 0.0;
};

/// Network-facing conditioning input: sketch in {0,1}, texture intensity L/100,
/// texture location mask, color a/128 and b/128 with kColorSentinel elsewhere.
struct InputStack {
    BinaryMap sketch;
    Plane<float> tex_intensity;
    BinaryMap tex_mask;
    Plane<float> color_a;
    Plane<float> color_b;

    static constexpr int kChannels = 5;

    /// Sketch-free stack: no texture, all color sentinels.
    static InputStack blank(int height, int width);

    [[nodiscard]] int height() const { return sketch.height; }
    [[nodiscard]] int width() const { return sketch.width; }

    /// Throws ValidationError when a structural invariant is broken.
    void validate() const;

    friend bool operator==(const InputStack&, const InputStack&) = default;
};

struct TrainingExample {
    InputStack input;
    LabImage target;
    SegmentationMask mask;
    std::string source_id;
    std::vector<PatchPlacement> texture_placements;
    std::optional<PatchPlacement> color_placement;
};

struct TextureExample {
    LabImage texture;
    std::string source_id;
};

// ---- masks ---------------------------------------------------------------

enum class MaskMode { white_background, provided, sketch_fill };

MaskMode parse_mask_mode(std::string_view s);
std::string_view to_string(MaskMode m);

struct MaskInputs {
    /// Required for MaskMode::provided (1 = foreground).
    const BinaryMap* provided = nullptr;
    /// Required for MaskMode::sketch_fill (1 = stroke).
    const BinaryMap* sketch = nullptr;
    double white_threshold = 0.95;
    /// Used in error messages.
    std::string_view image_name = "<image>";
};

/// Throws MaskRejected when nothing is foreground.
SegmentationMask compute_foreground_mask(const RgbImage& photo, MaskMode mode, const MaskInputs& inputs = {});

// ---- sketches ------------------------------------------------------------

enum class SketchMethod { mask_canny, xdog, learned_edges };

SketchMethod parse_sketch_method(std::string_view s);
std::string_view to_string(SketchMethod m);

/// Extended difference-of-Gaussians on luminance in [0,1].
struct XdogParams {
    double sigma = 0.8;
    double k = 1.6;
    double tau = 0.98;
    double epsilon = -0.01;
    double phi = 200.0;
};

/// Pluggable learned edge detector (e.g. an HED-style network).
using EdgeModel = std::function<BinaryMap(const RgbImage&)>;

struct SketchOptions {
    XdogParams xdog{};
    EdgeModel learned_edges;
};

/// Binary stroke image (1 = stroke). mask_canny traces the 1-px inner
/// boundary of the mask; the image border is not an edge.
BinaryMap generate_sketch(const RgbImage& photo, const SegmentationMask& mask, SketchMethod method,
                          const SketchOptions& options = {});

/// Soft XDoG response in [0,1] (0 = ink); exposed for inspection and tests.
Plane<float> xdog_response(const RgbImage& photo, const XdogParams& p);

// ---- placements ----------------------------------------------------------

struct PlacementConfig {
    int min_size = 24;
    int max_size = 64;
    int max_retries = 64;
    double min_overlap = 0.70;
    double shrink = 0.8;
};

/// Side-length range scaled from 24..64 px at 128 resolution.
PlacementConfig placement_defaults(int resolution);

/// Fraction of `r` covered by the mask.
double overlap_fraction(const SegmentationMask& mask, const Rect& r);

/// Square placement with overlap >= cfg.min_overlap. Deterministic in `seed`.
/// Throws SamplingError when no placement survives retries and shrinking.
PatchPlacement sample_patch_placement(const SegmentationMask& mask, std::uint64_t seed, const PlacementConfig& cfg);

// ---- examples ------------------------------------------------------------

struct ExampleConfig {
    int resolution = 128;
    MaskMode mask_mode = MaskMode::white_background;
    double white_threshold = 0.95;
    SketchMethod sketch = SketchMethod::mask_canny;
    SketchOptions sketch_options{};
    /// 1 or 2 texture patches; with 2 the second appears with `two_patch_probability`.
    int max_patches = 1;
    double two_patch_probability = 0.5;
    PlacementConfig placement = placement_defaults(128);
};

struct ExampleExtras {
    const BinaryMap* provided_mask = nullptr;
    /// Semantic region ids (0 = none); texture patches come from distinct regions when present.
    const Plane<std::uint16_t>* regions = nullptr;
};

TrainingExample make_training_example(const RgbImage& photo, std::uint64_t seed, const ExampleConfig& cfg,
                                      std::string source_id, const ExampleExtras& extras = {});

// ---- textures ------------------------------------------------------------

struct TextureIngestConfig {
    int resolution = 128;
    int crops_per_image = 50;
    std::uint64_t seed = 0;
};

/// Lexicographic file order; undecodable files are skipped with a warning.
/// Throws ConfigError when the directory is missing or yields no textures.
std::vector<TextureExample> ingest_texture_dir(const std::filesystem::path& dir, const TextureIngestConfig& cfg);

/// Crops of one already-decoded texture image (resized up when smaller than the resolution).
std::vector<TextureExample> texture_crops(const RgbImage& img, const std::string& name, const TextureIngestConfig& cfg);

// ---- network-facing tensors ----------------------------------------------

Tensor input_tensor(std::span<const InputStack> inputs);
/// (N,3,H,W): L/100, a/128, b/128.
Tensor lab_tensor(std::span<const LabImage> images);
Tensor mask_tensor(std::span<const SegmentationMask> masks);
/// Inverse of lab_tensor for batch entry n, clamped to Lab ranges.
LabImage lab_from_tensor(const Tensor& t, int n);

}  // namespace tgan::datagen
