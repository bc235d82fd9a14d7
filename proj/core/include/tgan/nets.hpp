/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tgan/autograd.hpp"
#include "tgan/nn.hpp"

namespace tgan::nets {

// ---- generator -----------------------------------------------------------

struct GeneratorConfig {
    static constexpr int input_channels = 5;
    static constexpr int output_channels = 3;
    /// Expected square input side; 0 accepts any multiple of 2^n_down.
    int resolution = 0;
    int base_width = 16;
    int n_down = 3;
    int n_up = 3;
    int n_res = 5;
    bool skip_connections = true;

    /// Throws ConfigError on non-positive widths or n_down != n_up.
    void validate() const;
};

/// Encoder / residual core / decoder. Input is the 5-channel conditioning
/// tensor; color sentinels are turned into a validity channel before the
/// first convolution. Output is (N,3,H,W) in network Lab units: L/100 in (0,1) and
/// a/128, b/128 in (-1,1).
class Generator {
public:
    Generator(GeneratorConfig cfg, std::uint64_t seed);

    ag::Var forward(const ag::Var& input) const;

    [[nodiscard]] const GeneratorConfig& config() const { return cfg_; }
    [[nodiscard]] nn::ParamList parameters() const;

private:
    struct Block {
        nn::Conv2d conv;
        nn::InstanceNorm norm;
    };
    struct Residual {
        Block first;
        Block second;
    };

    GeneratorConfig cfg_;
    Block head_;
    std::vector<Block> down_;
    std::vector<Residual> res_;
    std::vector<Block> up_;
    nn::Conv2d tail_;
};

// ---- global discriminator ------------------------------------------------

struct DiscriminatorConfig {
    int width = 16;
    int blocks = 4;
    /// Also feed the sketch channel alongside lightness.
    bool conditional = false;

    void validate() const;
};

/// Patch discriminator over the lightness channel. Scores are raw
/// least-squares outputs on a (N,1,H/2^blocks,W/2^blocks) grid.
class Discriminator {
public:
    Discriminator(DiscriminatorConfig cfg, std::uint64_t seed);

    /// `lightness` is (N,1,H,W); `sketch` is required iff the config is conditional.
    ag::Var forward(const ag::Var& lightness, const ag::Var* sketch = nullptr) const;

    /// Score grid side for a square input of side `input`.
    [[nodiscard]] int grid_extent(int input) const;
    [[nodiscard]] const DiscriminatorConfig& config() const { return cfg_; }
    [[nodiscard]] nn::ParamList parameters() const;

private:
    DiscriminatorConfig cfg_;
    std::vector<nn::Conv2d> convs_;
    std::vector<std::optional<nn::InstanceNorm>> norms_;
    nn::Conv2d score_;
};

// ---- local texture discriminator ----------------------------------------

struct LocalDiscriminatorConfig {
    int width = 16;
    int blocks = 3;

    void validate() const;
};

/// Scores an ordered pair of equally sized lightness crops (generated,
/// reference) stacked as two channels. One score per batch entry, (N,1,1,1).
class LocalDiscriminator {
public:
    LocalDiscriminator(LocalDiscriminatorConfig cfg, std::uint64_t seed);

    ag::Var forward(const ag::Var& patch_g, const ag::Var& patch_t) const;

    [[nodiscard]] const LocalDiscriminatorConfig& config() const { return cfg_; }
    [[nodiscard]] nn::ParamList parameters() const;

private:
    LocalDiscriminatorConfig cfg_;
    std::vector<nn::Conv2d> convs_;
    std::vector<std::optional<nn::InstanceNorm>> norms_;
    nn::Conv2d hidden_;
    nn::Conv2d score_;
};

// ---- frozen feature extractors ------------------------------------------

enum class Tap { mid, deep };

/// Accepts "mid"/"relu3_2" and "deep"/"relu4_2"; anything else is a ConfigError.
Tap parse_tap(std::string_view name);
std::string_view to_string(Tap t);

struct FeatureTaps {
    std::optional<ag::Var> mid;
    std::optional<ag::Var> deep;

    /// Throws ConfigError when the tap was not requested.
    [[nodiscard]] const ag::Var& at(Tap t) const;
};

/// Frozen network over (N,3,H,W) grayscale triples in [0,1]. Its parameters
/// never require gradients; gradients still flow back to the input.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;

    [[nodiscard]] virtual FeatureTaps extract(const ag::Var& gray3, std::span<const Tap> taps) const = 0;
    [[nodiscard]] virtual int channels(Tap t) const = 0;
    [[nodiscard]] virtual nn::ParamList parameters() const = 0;
    /// Short identity string stored in checkpoints, e.g. "tiny:7".
    [[nodiscard]] virtual std::string descriptor() const = 0;

    [[nodiscard]] std::uint64_t digest() const { return nn::parameter_digest(parameters()); }
};

/// Three fixed-seed random convolutions with edge-replicating padding:
/// 3 -> w0 (stride 1), w0 -> w1 (stride 2, mid), w1 -> w2 (stride 2, deep).
class TinyFeatureExtractor final : public FeatureExtractor {
public:
    explicit TinyFeatureExtractor(std::uint64_t seed, std::array<int, 3> widths = {8, 16, 32});

    [[nodiscard]] FeatureTaps extract(const ag::Var& gray3, std::span<const Tap> taps) const override;
    [[nodiscard]] int channels(Tap t) const override;
    [[nodiscard]] nn::ParamList parameters() const override;
    [[nodiscard]] std::string descriptor() const override;

private:
    std::uint64_t seed_;
    std::array<nn::Conv2d, 3> convs_;
};

/// VGG-19 trunk up to relu4_2 with ImageNet input normalization applied
/// internally. Weights come from a "TGVGG19" file (see tools/convert_vgg19.py).
class Vgg19FeatureExtractor final : public FeatureExtractor {
public:
    static constexpr int kLayers = 10;

    /// Throws ConfigError when the file is missing or malformed.
    static std::unique_ptr<Vgg19FeatureExtractor> load(const std::filesystem::path& path);
    /// Random He-initialized weights; for tests and benchmarks.
    static std::unique_ptr<Vgg19FeatureExtractor> random(std::uint64_t seed);

    /// Writes the weights in the format `load` reads.
    void save(const std::filesystem::path& path) const;

    [[nodiscard]] FeatureTaps extract(const ag::Var& gray3, std::span<const Tap> taps) const override;
    [[nodiscard]] int channels(Tap t) const override;
    [[nodiscard]] nn::ParamList parameters() const override;
    [[nodiscard]] std::string descriptor() const override;

private:
    Vgg19FeatureExtractor() = default;

    std::array<nn::Conv2d, kLayers> convs_;
    std::string source_;
};

struct FeatureSpec {
    /// "tiny" or "vgg19".
    std::string kind = "tiny";
    std::uint64_t seed = 7;
    std::filesystem::path weights;
};

std::shared_ptr<const FeatureExtractor> make_feature_extractor(const FeatureSpec& spec);

}  // namespace tgan::nets
