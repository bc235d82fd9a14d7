/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <array>
#include <cstdint>
#include <nlohmann/json_fwd.hpp>
#include <span>
#include <string_view>
#include <vector>

#include "tgan/autograd.hpp"
#include "tgan/datagen.hpp"
#include "tgan/nets.hpp"

/// Loss terms over network-unit Lab tensors: channel 0 is L/100, channels 1-2
/// are a/128 and b/128. Structure terms read channel 0 only, the color term
/// reads channels 1-2 only.
namespace tgan::losses {

struct LossWeights {
    double adv = 1.0;
    double style = 0.1;
    double pixel = 10.0;
    double color = 100.0;
    double local_style = 1.0;
    double local_pixel = 10.0;
    double local_adv = 1.0;

    /// Throws ConfigError on negative or non-finite weights.
    void validate() const;
};

/// Switches that remove whole groups of terms.
struct Ablation {
    /// Global and local style.
    bool style = false;
    /// Global and local adversarial.
    bool adversarial = false;
    /// Local style, local pixel and local adversarial.
    bool local_texture = false;
};

/// Unweighted term values plus the weighted total.
struct LossReport {
    double feature = 0;
    double adv = 0;
    double style = 0;
    double pixel = 0;
    double color = 0;
    double local_style = 0;
    double local_pixel = 0;
    double local_adv = 0;
    double total = 0;

    static constexpr std::array<std::string_view, 9> kKeys = {
        "feature", "adv", "style", "pixel", "color", "local_style", "local_pixel", "local_adv", "total"};

    [[nodiscard]] double get(std::string_view key) const;
    [[nodiscard]] nlohmann::json to_json() const;
    [[nodiscard]] bool finite() const;
};

// ---- building blocks -----------------------------------------------------

/// Feature correlations per batch entry, (N,C,H,W) -> (N,1,C,C), divided by
/// C*H*W unless `normalize` is false.
ag::Var gram(const ag::Var& features, bool normalize = true);

inline constexpr std::array<nets::Tap, 2> kAllTaps = {nets::Tap::mid, nets::Tap::deep};

/// Mean squared difference of deep-tap activations of the replicated
/// lightness maps. Both inputs are (N,1,H,W) in [0,1].
ag::Var feature_loss(const ag::Var& gen_L, const ag::Var& gt_L, const nets::FeatureExtractor& fe);

/// Sum over taps of the mean squared Gram difference.
ag::Var style_loss(const ag::Var& gen_L, const ag::Var& ref_L, const nets::FeatureExtractor& fe,
                   std::span<const nets::Tap> taps = kAllTaps);

/// Mean squared error, optionally restricted to mask (N,1,H,W). An all-zero
/// mask yields 0 and logs a warning.
ag::Var pixel_loss(const ag::Var& gen_L, const ag::Var& ref_L, const Tensor* mask = nullptr);
ag::Var color_loss(const ag::Var& gen_ab, const ag::Var& ref_ab, const Tensor* mask = nullptr);

/// mean((real-1)^2) + mean(fake^2)
ag::Var lsgan_d_loss(const ag::Var& real_scores, const ag::Var& fake_scores);
/// mean((fake-1)^2)
ag::Var lsgan_g_loss(const ag::Var& fake_scores);

// ---- local patches -------------------------------------------------------

/// n placements of s x s inside the mask (overlap rule of datagen), seeded.
std::vector<datagen::PatchPlacement> sample_crop_rects(const datagen::SegmentationMask& mask, int n, int s,
                                                       std::uint64_t seed);

struct Crops {
    std::vector<datagen::PatchPlacement> placements;
    /// (n,C,s,s)
    ag::Var patches;
};

/// Crops from a single-entry image (1,C,H,W).
Crops crop_patches(const ag::Var& image, const datagen::SegmentationMask& mask, int n, int s, std::uint64_t seed);

/// Stacks crops of batch entry `entry` at the given rectangles along the batch axis.
ag::Var gather_crops(const ag::Var& images, int entry, std::span<const datagen::PatchPlacement> placements);

struct LocalConfig {
    int patch_size = 60;
    int n_patches = 1;
};

/// 100 at 256, 60 at 128, proportional elsewhere.
int default_patch_size(int resolution);

struct LocalTextureTerms {
    ag::Var style;
    ag::Var pixel;
    ag::Var adv;
    /// w_s * style + w_p * pixel + w_adv * adv
    ag::Var total;
    /// Generated crops (M,1,s,s) and the co-located texture crops.
    ag::Var patch_g;
    ag::Var patch_t;
    /// placements[n] holds the rectangles used for batch entry n.
    std::vector<std::vector<datagen::PatchPlacement>> placements;
};

/// Paired-crop texture loss on lightness. gen_L and texture_L are (N,1,H,W);
/// texture crops are taken at the same rectangles as the generated crops.
LocalTextureTerms local_texture_loss(const ag::Var& gen_L, const Tensor& texture_L,
                                     std::span<const datagen::SegmentationMask> masks,
                                     const nets::LocalDiscriminator* d_txt, const nets::FeatureExtractor& fe,
                                     const LossWeights& weights, const LocalConfig& cfg, std::uint64_t seed,
                                     const Ablation& ablation = {});

// ---- objectives ----------------------------------------------------------

struct Critics {
    const nets::FeatureExtractor& features;
    const nets::Discriminator* disc = nullptr;
    const nets::LocalDiscriminator* local = nullptr;
};

enum class StyleReference { ground_truth, texture_patch };

StyleReference parse_style_reference(std::string_view s);
std::string_view to_string(StyleReference r);

struct PretrainTargets {
    /// (N,3,H,W) network-unit Lab.
    Tensor target;
    /// (N,1,H,W), used by a conditional discriminator.
    Tensor sketch;
    StyleReference style_reference = StyleReference::ground_truth;
    /// Per batch entry, the rectangle compared under StyleReference::texture_patch.
    std::vector<Rect> style_rects;
};

struct Objective {
    ag::Var total;
    LossReport report;
};

/// L_F + w_adv L_adv + w_style L_S + w_pixel L_P + w_color L_C.
Objective pretrain_objective(const ag::Var& output, const PretrainTargets& targets, const Critics& critics,
                             const LossWeights& weights, const Ablation& ablation = {});

struct FinetuneTargets {
    /// (N,1,H,W) lightness of the real example the sketch came from.
    Tensor gt_lightness;
    /// (N,3,H,W) network-unit Lab of the external texture.
    Tensor texture;
    /// (N,1,H,W) foreground mask matching `masks`.
    Tensor mask;
    std::vector<datagen::SegmentationMask> masks;
    Tensor sketch;
    LocalConfig local{};
    std::uint64_t seed = 0;
};

struct FinetuneObjective {
    ag::Var total;
    LossReport report;
    LocalTextureTerms local;
};

/// L_F + w_adv L_adv + w_pixel L'_P + w_color L'_C + L_t, with L'_P and L'_C
/// masked to the foreground against the whole texture.
FinetuneObjective finetune_objective(const ag::Var& output, const FinetuneTargets& targets, const Critics& critics,
                                     const LossWeights& weights, const Ablation& ablation = {});

}  // namespace tgan::losses
