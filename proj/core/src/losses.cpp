/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "tgan/losses.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <nlohmann/json.hpp>

#include "tgan/codec.hpp"
#include "tgan/colorkit.hpp"
#include "tgan/errors.hpp"

namespace tgan::losses {

namespace {

ag::Var zero() { return ag::Var::constant(Tensor::scalar(0.0)); }

ag::Var lightness_of(const ag::Var& lab) { return ag::slice_channels(lab, 0, 1); }
ag::Var chroma_of(const ag::Var& lab) { return ag::slice_channels(lab, 1, 2); }

bool empty_mask(const Tensor& mask) {
    for (double v : mask.data()) {
        if (v != 0.0) {
            return false;
        }
    }
    return true;
}

ag::Var masked_or_plain(const ag::Var& a, const ag::Var& b, const Tensor* mask, const char* what) {
    if (mask == nullptr) {
        return ag::mse(a, b);
    }
    if (empty_mask(*mask)) {
        spdlog::warn("{}: mask selects no pixels, loss defined as 0", what);
    }
    return ag::masked_mse(a, b, *mask);
}

ag::Var scores_target_mse(const ag::Var& scores, double target) {
    return ag::mse(scores, ag::Var::constant(Tensor(scores.shape(), target)));
}

}  // namespace

void LossWeights::validate() const {
    for (double w : {adv, style, pixel, color, local_style, local_pixel, local_adv}) {
        if (!std::isfinite(w) || w < 0.0) {
            throw ConfigError("loss weights must be finite and non-negative");
        }
    }
}

double LossReport::get(std::string_view key) const {
    const std::array<double, 9> values = {feature, adv, style, pixel, color, local_style, local_pixel, local_adv, total};
    for (std::size_t i = 0; i < kKeys.size(); ++i) {
        if (kKeys[i] == key) {
            return values[i];
        }
    }
    throw ConfigError("unknown loss term '" + std::string(key) + "'");
}

nlohmann::json LossReport::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (auto key : kKeys) {
        j[std::string(key)] = get(key);
    }
    return j;
}

bool LossReport::finite() const {
    for (auto key : kKeys) {
        if (!std::isfinite(get(key))) {
            return false;
        }
    }
    return true;
}

// ---- building blocks -----------------------------------------------------

ag::Var gram(const ag::Var& features, bool normalize) { return ag::gram(features, normalize); }

ag::Var feature_loss(const ag::Var& gen_L, const ag::Var& gt_L, const nets::FeatureExtractor& fe) {
    if (gen_L.shape() != gt_L.shape()) {
        throw ShapeError("feature_loss: " + gen_L.shape().str() + " vs " + gt_L.shape().str());
    }
    static constexpr std::array<nets::Tap, 1> deep = {nets::Tap::deep};
    const auto gen = fe.extract(colorkit::replicate_gray(gen_L), deep);
    const auto ref = fe.extract(colorkit::replicate_gray(gt_L), deep);
    return ag::mse(gen.at(nets::Tap::deep), ref.at(nets::Tap::deep));
}

ag::Var style_loss(const ag::Var& gen_L, const ag::Var& ref_L, const nets::FeatureExtractor& fe,
                   std::span<const nets::Tap> taps) {
    if (gen_L.shape().c != 1 || ref_L.shape().c != 1 || gen_L.shape().n != ref_L.shape().n) {
        throw ShapeError("style_loss: " + gen_L.shape().str() + " vs " + ref_L.shape().str());
    }
    const auto gen = fe.extract(colorkit::replicate_gray(gen_L), taps);
    const auto ref = fe.extract(colorkit::replicate_gray(ref_L), taps);
    ag::Var total = zero();
    for (nets::Tap t : taps) {
        total = total + ag::mse(gram(gen.at(t)), gram(ref.at(t)));
    }
    return total;
}

ag::Var pixel_loss(const ag::Var& gen_L, const ag::Var& ref_L, const Tensor* mask) {
    return masked_or_plain(gen_L, ref_L, mask, "pixel loss");
}

ag::Var color_loss(const ag::Var& gen_ab, const ag::Var& ref_ab, const Tensor* mask) {
    return masked_or_plain(gen_ab, ref_ab, mask, "color loss");
}

ag::Var lsgan_d_loss(const ag::Var& real_scores, const ag::Var& fake_scores) {
    return scores_target_mse(real_scores, 1.0) + scores_target_mse(fake_scores, 0.0);
}

ag::Var lsgan_g_loss(const ag::Var& fake_scores) { return scores_target_mse(fake_scores, 1.0); }

// ---- local patches -------------------------------------------------------

std::vector<datagen::PatchPlacement> sample_crop_rects(const datagen::SegmentationMask& mask, int n, int s,
                                                       std::uint64_t seed) {
    if (n <= 0 || s <= 0) {
        throw ConfigError("crop count and size must be positive");
    }
    datagen::PlacementConfig cfg;
    cfg.min_size = s;
    cfg.max_size = s;
    std::vector<datagen::PatchPlacement> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        out.push_back(datagen::sample_patch_placement(mask, codec::derive_seed(seed, static_cast<std::uint64_t>(i)), cfg));
    }
    return out;
}

ag::Var gather_crops(const ag::Var& images, int entry, std::span<const datagen::PatchPlacement> placements) {
    const ag::Var one = ag::slice_batch(images, entry, 1);
    std::vector<ag::Var> parts;
    parts.reserve(placements.size());
    for (const auto& p : placements) {
        parts.push_back(ag::crop(one, p.rect.y, p.rect.x, p.rect.h, p.rect.w));
    }
    return ag::concat_batch(parts);
}

Crops crop_patches(const ag::Var& image, const datagen::SegmentationMask& mask, int n, int s, std::uint64_t seed) {
    if (image.shape().n != 1 || image.shape().h != mask.height() || image.shape().w != mask.width()) {
        throw ShapeError("crop_patches: image " + image.shape().str() + " does not match its mask");
    }
    Crops out;
    out.placements = sample_crop_rects(mask, n, s, seed);
    out.patches = gather_crops(image, 0, out.placements);
    return out;
}

int default_patch_size(int resolution) {
    if (resolution == 256) {
        return 100;
    }
    return std::max(1, resolution * 60 / 128);
}

LocalTextureTerms local_texture_loss(const ag::Var& gen_L, const Tensor& texture_L,
                                     std::span<const datagen::SegmentationMask> masks,
                                     const nets::LocalDiscriminator* d_txt, const nets::FeatureExtractor& fe,
                                     const LossWeights& weights, const LocalConfig& cfg, std::uint64_t seed,
                                     const Ablation& ablation) {
    const Shape s = gen_L.shape();
    if (s.c != 1 || texture_L.shape() != s || masks.size() != static_cast<std::size_t>(s.n)) {
        throw ShapeError("local_texture_loss: generated " + s.str() + ", texture " + texture_L.shape().str() +
                         ", " + std::to_string(masks.size()) + " masks");
    }
    LocalTextureTerms out;
    const ag::Var texture = ag::Var::constant(texture_L);
    std::vector<ag::Var> gen_parts;
    std::vector<ag::Var> tex_parts;
    for (int n = 0; n < s.n; ++n) {
        auto rects = sample_crop_rects(masks[n], cfg.n_patches, cfg.patch_size,
                                       codec::derive_seed(seed, static_cast<std::uint64_t>(n)));
        gen_parts.push_back(gather_crops(gen_L, n, rects));
        tex_parts.push_back(gather_crops(texture, n, rects));
        out.placements.push_back(std::move(rects));
    }
    out.patch_g = ag::concat_batch(gen_parts);
    out.patch_t = ag::concat_batch(tex_parts);

    out.style = zero();
    out.pixel = zero();
    out.adv = zero();
    if (!ablation.local_texture) {
        if (!ablation.style) {
            out.style = style_loss(out.patch_g, out.patch_t, fe);
        }
        out.pixel = ag::mse(out.patch_g, out.patch_t);
        if (!ablation.adversarial) {
            if (d_txt == nullptr) {
                throw ConfigError("local texture loss needs a local discriminator");
            }
            out.adv = lsgan_g_loss(d_txt->forward(out.patch_g, out.patch_t));
        }
    }
    out.total = weights.local_style * out.style + weights.local_pixel * out.pixel + weights.local_adv * out.adv;
    return out;
}

// ---- objectives ----------------------------------------------------------

StyleReference parse_style_reference(std::string_view s) {
    if (s == "ground_truth") {
        return StyleReference::ground_truth;
    }
    if (s == "texture_patch") {
        return StyleReference::texture_patch;
    }
    throw ConfigError("unknown style reference '" + std::string(s) + "' (expected ground_truth or texture_patch)");
}

std::string_view to_string(StyleReference r) {
    return r == StyleReference::ground_truth ? "ground_truth" : "texture_patch";
}

namespace {

ag::Var adversarial_term(const ag::Var& gen_L, const Tensor& sketch, const Critics& critics) {
    if (critics.disc == nullptr) {
        throw ConfigError("adversarial term needs a global discriminator");
    }
    if (critics.disc->config().conditional) {
        const ag::Var sk = ag::Var::constant(sketch);
        return lsgan_g_loss(critics.disc->forward(gen_L, &sk));
    }
    return lsgan_g_loss(critics.disc->forward(gen_L));
}

ag::Var patch_style(const ag::Var& gen_L, const ag::Var& ref_L, std::span<const Rect> rects,
                    const nets::FeatureExtractor& fe) {
    if (rects.size() != static_cast<std::size_t>(gen_L.shape().n)) {
        throw ConfigError("texture_patch style reference needs one rectangle per batch entry");
    }
    ag::Var total = zero();
    for (std::size_t n = 0; n < rects.size(); ++n) {
        const Rect& r = rects[n];
        const int i = static_cast<int>(n);
        total = total + style_loss(ag::crop(ag::slice_batch(gen_L, i, 1), r.y, r.x, r.h, r.w),
                                   ag::crop(ag::slice_batch(ref_L, i, 1), r.y, r.x, r.h, r.w), fe);
    }
    return ag::scale(total, 1.0 / static_cast<double>(rects.size()));
}

}  // namespace

Objective pretrain_objective(const ag::Var& output, const PretrainTargets& targets, const Critics& critics,
                             const LossWeights& weights, const Ablation& ablation) {
    if (output.shape() != targets.target.shape() || output.shape().c != 3) {
        throw ShapeError("pretrain_objective: output " + output.shape().str() + " vs target " +
                         targets.target.shape().str());
    }
    const ag::Var target = ag::Var::constant(targets.target);
    const ag::Var gen_L = lightness_of(output);
    const ag::Var gen_ab = chroma_of(output);
    const ag::Var ref_L = lightness_of(target);

    const ag::Var feature = feature_loss(gen_L, ref_L, critics.features);
    const ag::Var adv = ablation.adversarial ? zero() : adversarial_term(gen_L, targets.sketch, critics);
    ag::Var style = zero();
    if (!ablation.style) {
        style = targets.style_reference == StyleReference::ground_truth
                    ? style_loss(gen_L, ref_L, critics.features)
                    : patch_style(gen_L, ref_L, targets.style_rects, critics.features);
    }
    const ag::Var pixel = pixel_loss(gen_L, ref_L);
    const ag::Var color = color_loss(gen_ab, chroma_of(target));

    Objective out;
    out.total = feature + weights.adv * adv + weights.style * style + weights.pixel * pixel + weights.color * color;
    out.report.feature = feature.item();
    out.report.adv = adv.item();
    out.report.style = style.item();
    out.report.pixel = pixel.item();
    out.report.color = color.item();
    out.report.total = out.total.item();
    return out;
}

FinetuneObjective finetune_objective(const ag::Var& output, const FinetuneTargets& targets, const Critics& critics,
                                     const LossWeights& weights, const Ablation& ablation) {
    const Shape s = output.shape();
    if (s.c != 3 || targets.texture.shape() != s) {
        throw ShapeError("finetune_objective: output " + s.str() + " vs texture " + targets.texture.shape().str());
    }
    const ag::Var texture = ag::Var::constant(targets.texture);
    const ag::Var gen_L = lightness_of(output);
    const ag::Var gen_ab = chroma_of(output);
    const ag::Var tex_L = lightness_of(texture);

    const ag::Var feature = feature_loss(gen_L, ag::Var::constant(targets.gt_lightness), critics.features);
    const ag::Var adv = ablation.adversarial ? zero() : adversarial_term(gen_L, targets.sketch, critics);
    const ag::Var pixel = pixel_loss(gen_L, tex_L, &targets.mask);
    const ag::Var color = color_loss(gen_ab, chroma_of(texture), &targets.mask);

    FinetuneObjective out;
    out.local = local_texture_loss(gen_L, tex_L.value(), targets.masks, critics.local, critics.features, weights,
                                   targets.local, targets.seed, ablation);
    out.total = feature + weights.adv * adv + weights.pixel * pixel + weights.color * color + out.local.total;
    out.report.feature = feature.item();
    out.report.adv = adv.item();
    out.report.pixel = pixel.item();
    out.report.color = color.item();
    out.report.local_style = out.local.style.item();
    out.report.local_pixel = out.local.pixel.item();
    out.report.local_adv = out.local.adv.item();
    out.report.total = out.total.item();
    return out;
}

}  // namespace tgan::losses
