/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "tgan/colorkit.hpp"
#include "tgan/datagen.hpp"
#include "tgan/image.hpp"
#include "tgan/nets.hpp"

/// Feed-forward synthesis from a sketch plus user-placed texture and color
/// patches. Works on a square canvas; nothing here needs a foreground mask.
namespace tgan::infer {

/// Canvas sides accepted by the synthesizer.
inline constexpr int kMinResolution = 16;
inline constexpr int kMaxResolution = 1024;

/// Requested canvas side outside [kMinResolution, kMaxResolution].
class UnsupportedResolution : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Texture image dragged onto a rectangle. The rectangle shows the image's
/// top-left corner, tiled when the image is smaller than the rectangle.
struct TexturePatch {
    RgbImage image;
    Rect rect;
};

/// Flat color, or a color image laid out like a texture patch.
struct ColorPatch {
    std::variant<colorkit::Rgb, RgbImage> source;
    Rect rect;
};

struct SynthesisRequest {
    /// 1 = stroke. Resized (nearest) to the canvas when its extent differs.
    BinaryMap sketch;
    std::vector<TexturePatch> textures;
    std::vector<ColorPatch> colors;
    int resolution = 128;

    /// Throws ValidationError naming the offending rectangle, or
    /// UnsupportedResolution.
    void validate() const;
};

/// "#rrggbb" or "rrggbb". Throws ValidationError otherwise.
colorkit::Rgb parse_hex_color(std::string_view text);
std::string to_hex(const colorkit::Rgb& c);

/// Conditioning stack at the request's resolution. Later patches overwrite
/// earlier ones where they overlap.
datagen::InputStack build_input(const SynthesisRequest& req);

/// Nearest-neighbor resample of every channel; keeps color sentinels intact.
datagen::InputStack resize_input(const datagen::InputStack& in, int side);

struct SynthesisResult {
    RgbImage image;
    LabImage lab;
    /// Side the generator actually ran at.
    int internal_resolution = 0;
    double latency_ms = 0.0;
    /// Channel values clamped when converting Lab back to sRGB.
    std::size_t clamped = 0;
};

/// Image source behind the service and the CLI.
class Backend {
public:
    virtual ~Backend() = default;
    [[nodiscard]] virtual SynthesisResult synthesize(const SynthesisRequest& req) const = 0;
    /// Side the backend was trained at.
    [[nodiscard]] virtual int native_resolution() const = 0;
    /// Content hash of the loaded model, stable across restarts.
    [[nodiscard]] virtual std::string model_id() const = 0;
};

/// Generator loaded from a checkpoint. Immutable after construction, so
/// concurrent synthesize calls are safe.
class Synthesizer final : public Backend {
public:
    Synthesizer(std::unique_ptr<nets::Generator> generator, int native_resolution, std::string model_id);

    /// Throws CheckpointError on unreadable or incompatible files.
    static std::unique_ptr<Synthesizer> from_file(const std::filesystem::path& checkpoint);
    static std::unique_ptr<Synthesizer> from_bytes(std::span<const std::uint8_t> checkpoint);

    [[nodiscard]] SynthesisResult synthesize(const SynthesisRequest& req) const override;
    /// Raw generator pass at the native resolution.
    [[nodiscard]] LabImage run(const datagen::InputStack& input) const;

    [[nodiscard]] int native_resolution() const override { return native_; }
    [[nodiscard]] std::string model_id() const override { return id_; }

private:
    std::unique_ptr<nets::Generator> g_;
    int native_;
    std::string id_;
};

/// Deterministic non-learned renderer: white canvas, texture patches pasted
/// as they are, flat colors filled in, sketch strokes drawn black on top.
class StubBackend final : public Backend {
public:
    explicit StubBackend(int native_resolution = 128);

    [[nodiscard]] SynthesisResult synthesize(const SynthesisRequest& req) const override;
    [[nodiscard]] int native_resolution() const override { return native_; }
    [[nodiscard]] std::string model_id() const override;

private:
    int native_;
};

}  // namespace tgan::infer
