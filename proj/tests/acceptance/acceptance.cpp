/*
 * SPDX-License-Identifier: Apache-2.0
 */
// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--only N[,N...]] [--work DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <httplib.h>
#include <unistd.h>
#include <nlohmann/json.hpp>

#include "tgan/checkpoint.hpp"
#include "tgan/codec.hpp"
#include "tgan/colorkit.hpp"
#include "tgan/datagen.hpp"
#include "tgan/image_io.hpp"
#include "tgan/infer.hpp"
#include "tgan/losses.hpp"
#include "tgan/nets.hpp"
#include "tgan/service.hpp"
#include "tgan/synthetic.hpp"
#include "tgan/train.hpp"

namespace fs = std::filesystem;
using namespace tgan;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

fs::path g_work;

// ---- 1. color roundtrip ---------------------------------------------------

Outcome color_roundtrip() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double rgb_err = 0.0;
    double lab_err = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const colorkit::Rgb c{u(rng), u(rng), u(rng)};
        const colorkit::Lab lab = colorkit::srgb_to_lab(c);
        const colorkit::Rgb back = colorkit::lab_to_srgb_unclamped(lab);
        rgb_err = std::max({rgb_err, std::abs(back.r - c.r), std::abs(back.g - c.g), std::abs(back.b - c.b)});
        // lab -> rgb -> lab, starting from an in-gamut Lab value.
        const colorkit::Lab again = colorkit::srgb_to_lab(colorkit::lab_to_srgb_unclamped(lab));
        lab_err = std::max({lab_err, std::abs(again.L - lab.L), std::abs(again.a - lab.a), std::abs(again.b - lab.b)});
    }
    // The image path (float storage) must agree with the per-pixel path.
    RgbImage img(100, 100);
    for (float& v : img.pixels) {
        v = static_cast<float>(u(rng));
    }
    const auto conv = colorkit::lab_to_rgb(colorkit::rgb_to_lab(img));
    double img_err = 0.0;
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        img_err = std::max(img_err, static_cast<double>(std::abs(conv.image.pixels[i] - img.pixels[i])));
    }
    const double secs = seconds_since(t0);
    const bool pass = rgb_err < 0.5 / 255.0 && lab_err < 1e-3 && img_err < 0.5 / 255.0 && secs < 10.0;
    return {pass, fmt("rgb->lab->rgb max %.2e (< %.2e), lab->rgb->lab max %.2e (< 1e-3), image path %.2e, %.2fs",
                      rgb_err, 0.5 / 255.0, lab_err, img_err, secs)};
}

// ---- 2. gram oracle --------------------------------------------------------

Outcome gram_oracle() {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> channels(1, 8);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int c = channels(rng);
        // K = h * w <= 64
        const int h = std::uniform_int_distribution<int>(1, 8)(rng);
        const int w = std::uniform_int_distribution<int>(1, 64 / h)(rng);
        Tensor f(Shape{1, c, h, w});
        for (double& v : f.data()) {
            v = u(rng);
        }
        const Tensor raw = ag::gram(ag::Var::constant(f), false).value();
        const Tensor norm = losses::gram(ag::Var::constant(f)).value();
        const int k = h * w;
        for (int i = 0; i < c; ++i) {
            for (int j = 0; j < c; ++j) {
                double direct = 0.0;
                for (int p = 0; p < k; ++p) {
                    direct += f.plane(0, i)[p] * f.plane(0, j)[p];
                }
                const double denom = std::max(std::abs(direct), 1e-12);
                worst = std::max(worst, std::abs(raw.at(0, 0, i, j) - direct) / denom);
                const double scaled = direct / (static_cast<double>(c) * k);
                worst = std::max(worst, std::abs(norm.at(0, 0, i, j) - scaled) / std::max(std::abs(scaled), 1e-12));
            }
        }
    }
    return {worst < 1e-6, fmt("100 maps, max relative error %.2e (< 1e-6), raw and C*K-normalized", worst)};
}

// ---- 3. gradient routing ---------------------------------------------------

Outcome gradient_routing() {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    const int n = 2;
    const int res = 64;
    Tensor gen(Shape{n, 3, res, res});
    Tensor target(Shape{n, 3, res, res});
    for (Tensor* t : {&gen, &target}) {
        for (int b = 0; b < n; ++b) {
            for (int c = 0; c < 3; ++c) {
                double* p = t->plane(b, c);
                for (std::size_t i = 0; i < t->shape().plane(); ++i) {
                    p[i] = c == 0 ? u(rng) : 2.0 * u(rng) - 1.0;
                }
            }
        }
    }
    const nets::TinyFeatureExtractor fe(7);
    const nets::Discriminator disc({8, 3, false}, 11);
    const losses::LossWeights w;
    ag::Var out = ag::Var::parameter(gen);
    const ag::Var tgt = ag::Var::constant(target);
    const ag::Var gen_L = ag::slice_channels(out, 0, 1);
    const ag::Var ref_L = ag::slice_channels(tgt, 0, 1);

    // Structure part: L_F + w_adv L_adv + w_s L_S + w_p L_P.
    const ag::Var structure = losses::feature_loss(gen_L, ref_L, fe) +
                              w.adv * losses::lsgan_g_loss(disc.forward(gen_L)) +
                              w.style * losses::style_loss(gen_L, ref_L, fe) + w.pixel * losses::pixel_loss(gen_L, ref_L);
    structure.backward();
    const Tensor g_struct = out.grad();
    out.zero_grad();
    const ag::Var color =
        w.color * losses::color_loss(ag::slice_channels(out, 1, 2), ag::slice_channels(tgt, 1, 2));
    color.backward();
    const Tensor g_color = out.grad();
    out.zero_grad();

    // The combined objective must route the same way.
    losses::PretrainTargets targets;
    targets.target = target;
    targets.sketch = Tensor(Shape{n, 1, res, res});
    const auto obj = losses::pretrain_objective(out, targets, {fe, &disc, nullptr}, w);
    obj.total.backward();
    const Tensor g_total = out.grad();

    std::size_t ab_nonzero = 0;
    std::size_t l_nonzero = 0;
    double l_mag = 0.0;
    double ab_mag = 0.0;
    std::size_t mismatch = 0;
    for (int b = 0; b < n; ++b) {
        for (std::size_t i = 0; i < gen.shape().plane(); ++i) {
            for (int c = 1; c < 3; ++c) {
                ab_nonzero += g_struct.plane(b, c)[i] != 0.0 ? 1 : 0;
                ab_mag = std::max(ab_mag, std::abs(g_color.plane(b, c)[i]));
                mismatch += g_total.plane(b, c)[i] != g_color.plane(b, c)[i] ? 1 : 0;
            }
            l_nonzero += g_color.plane(b, 0)[i] != 0.0 ? 1 : 0;
            l_mag = std::max(l_mag, std::abs(g_struct.plane(b, 0)[i]));
        }
    }
    const bool pass = ab_nonzero == 0 && l_nonzero == 0 && l_mag > 0.0 && ab_mag > 0.0 && mismatch == 0;
    return {pass, fmt("structure terms -> ab: %zu nonzero; color term -> L: %zu nonzero; full objective ab grad "
                      "differs from color-only grad at %zu entries (max |dL| %.2e, max |dab| %.2e)",
                      ab_nonzero, l_nonzero, mismatch, l_mag, ab_mag)};
}

// ---- 4. finite differences -------------------------------------------------

/// max |analytic - scale * fd| / max |scale * fd|
double fd_error(const std::function<ag::Var(const ag::Var&)>& loss, const Tensor& x0, double scale) {
    const ag::Var x = ag::Var::parameter(x0);
    loss(x).backward();
    const Tensor analytic = x.grad();
    const double h = 1e-6;
    double max_diff = 0.0;
    double max_ref = 0.0;
    Tensor probe = x0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
        const double keep = probe[i];
        probe[i] = keep + h;
        const double up = loss(ag::Var::constant(probe)).item();
        probe[i] = keep - h;
        const double down = loss(ag::Var::constant(probe)).item();
        probe[i] = keep;
        const double fd = scale * (up - down) / (2.0 * h);
        max_diff = std::max(max_diff, std::abs(analytic[i] - fd));
        max_ref = std::max(max_ref, std::abs(fd));
    }
    return max_ref > 0.0 ? max_diff / max_ref : max_diff;
}

Outcome finite_differences() {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.1, 0.9);
    auto random = [&](Shape s, double lo, double hi) {
        Tensor t(s);
        for (double& v : t.data()) {
            v = lo + (hi - lo) * u(rng);
        }
        return t;
    };
    const nets::TinyFeatureExtractor fe(7);
    const Tensor gen_L = random({1, 1, 16, 16}, 0.0, 1.0);
    const Tensor ref_L = ag::Var::constant(random({1, 1, 16, 16}, 0.0, 1.0)).value();
    const Tensor gen_ab = random({1, 2, 16, 16}, -1.0, 1.0);
    const Tensor ref_ab = random({1, 2, 16, 16}, -1.0, 1.0);
    Tensor mask(Shape{1, 1, 16, 16});
    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 8; ++x) {
            mask.at(0, 0, y, x) = 1.0;
        }
    }
    const ag::Var ref = ag::Var::constant(ref_L);
    const ag::Var refab = ag::Var::constant(ref_ab);
    // Gray replication averages the three channel gradients, so the analytic
    // gradient through it is one third of the plain derivative.
    const double rep = 1.0 / 3.0;
    const double e_feat = fd_error([&](const ag::Var& x) { return losses::feature_loss(x, ref, fe); }, gen_L, rep);
    const double e_style = fd_error([&](const ag::Var& x) { return losses::style_loss(x, ref, fe); }, gen_L, rep);
    const double e_pix = fd_error([&](const ag::Var& x) { return losses::pixel_loss(x, ref); }, gen_L, 1.0);
    const double e_pix_m = fd_error([&](const ag::Var& x) { return losses::pixel_loss(x, ref, &mask); }, gen_L, 1.0);
    const double e_col = fd_error([&](const ag::Var& x) { return losses::color_loss(x, refab); }, gen_ab, 1.0);
    const double e_col_m =
        fd_error([&](const ag::Var& x) { return losses::color_loss(x, refab, &mask); }, gen_ab, 1.0);
    const double worst = std::max({e_feat, e_style, e_pix, e_pix_m, e_col, e_col_m});
    return {worst < 1e-3,
            fmt("16x16 float64, tiny extractor: feature %.1e, style %.1e (vs FD/3, replication averaging), pixel "
                "%.1e/%.1e, color %.1e/%.1e (plain/masked); max %.1e (< 1e-3)",
                e_feat, e_style, e_pix, e_pix_m, e_col, e_col_m, worst)};
}

// ---- 5. patch sampling -----------------------------------------------------

Outcome patch_sampling() {
    std::mt19937_64 rng(5);
    const int res = 128;
    std::size_t violations = 0;
    std::size_t mismatched = 0;
    std::size_t total = 0;
    const auto cfg = datagen::placement_defaults(res);
    for (int m = 0; m < 10; ++m) {
        datagen::SegmentationMask mask{BinaryMap(res, res)};
        std::uniform_real_distribution<double> cx(40, 88);
        std::uniform_real_distribution<double> rad(22, 48);
        const int blobs = 1 + m % 3;
        for (int k = 0; k < blobs; ++k) {
            const double x0 = cx(rng), y0 = cx(rng), rx = rad(rng), ry = rad(rng);
            for (int y = 0; y < res; ++y) {
                for (int x = 0; x < res; ++x) {
                    const double dx = (x + 0.5 - x0) / rx, dy = (y + 0.5 - y0) / ry;
                    if (dx * dx + dy * dy <= 1.0) {
                        mask.mask(y, x) = 1;
                    }
                }
            }
        }
        for (int s = 0; s < 100; ++s) {
            const std::uint64_t seed = codec::derive_seed(static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(s));
            const auto p = datagen::sample_patch_placement(mask, seed, cfg);
            const Rect& r = p.rect;
            std::size_t inside = 0;
            bool in_bounds = r.inside(res, res);
            if (in_bounds) {
                for (int y = r.y; y < r.y + r.h; ++y) {
                    for (int x = r.x; x < r.x + r.w; ++x) {
                        inside += mask.mask(y, x);
                    }
                }
            }
            const double overlap = in_bounds ? static_cast<double>(inside) / (static_cast<double>(r.w) * r.h) : 0.0;
            violations += (!in_bounds || overlap < 0.70) ? 1 : 0;
            const auto again = datagen::sample_patch_placement(mask, seed, cfg);
            mismatched += again.rect == r ? 0 : 1;
            ++total;
        }
    }
    return {violations == 0 && mismatched == 0 && total == 1000,
            fmt("%zu placements over 10 masks: %zu overlap violations, %zu seed-replay mismatches", total, violations,
                mismatched)};
}

// ---- 6. overfit smoke ------------------------------------------------------

constexpr int kSmokeRes = 64;

std::shared_ptr<datagen::Dataset> smoke_dataset() {
    auto ds = std::make_shared<datagen::Dataset>();
    ds->resolution = kSmokeRes;
    datagen::ExampleConfig ec;
    ec.resolution = kSmokeRes;
    ec.placement = datagen::placement_defaults(kSmokeRes);
    synthetic::ProductOptions po;
    po.min_period = 0.35;
    po.max_period = 0.6;
    for (int i = 0; i < 8; ++i) {
        const RgbImage photo = synthetic::product_photo(100 + static_cast<std::uint64_t>(i), kSmokeRes, po);
        ds->examples.push_back(
            datagen::make_training_example(photo, 1000 + static_cast<std::uint64_t>(i), ec, "p" + std::to_string(i)));
    }
    return ds;
}

train::TrainConfig smoke_config() {
    train::TrainConfig cfg;
    cfg.resolution = kSmokeRes;
    cfg.batch_size = 8;
    cfg.iterations = 500;
    cfg.model.base_width = 8;
    cfg.learning_rates.g = 1e-3;
    cfg.out_dir = g_work / "overfit";
    return cfg;
}

std::optional<fs::path> g_stage1;

Outcome overfit_smoke() {
    const auto t0 = Clock::now();
    const auto ds = smoke_dataset();
    const train::TrainConfig cfg = smoke_config();
    train::Trainer trainer(cfg, ds);
    std::vector<double> totals;
    for (int i = 0; i < cfg.iterations; ++i) {
        totals.push_back(trainer.step().report.total);
    }
    fs::create_directories(cfg.out_dir);
    const fs::path ckpt = cfg.out_dir / "stage1.tgck";
    trainer.checkpoint().save(ckpt);
    g_stage1 = ckpt;

    double first = 0.0;
    double last = 0.0;
    for (int i = 0; i < 10; ++i) {
        first += totals[static_cast<std::size_t>(i)] / 10.0;
        last += totals[totals.size() - 1 - static_cast<std::size_t>(i)] / 10.0;
    }
    const double drop = 1.0 - last / first;

    // Reload through the inference path and replay every training input.
    const auto synth = infer::Synthesizer::from_file(ckpt);
    double err = 0.0;
    std::size_t count = 0;
    for (const auto& ex : ds->examples) {
        const LabImage out = synth->run(ex.input);
        for (std::size_t i = 0; i < out.L.size(); ++i) {
            err += std::abs(out.L.values[i] - ex.target.L.values[i]);
            ++count;
        }
    }
    const double mean_dl = err / static_cast<double>(count);
    const double secs = seconds_since(t0);
    const bool pass = drop >= 0.80 && mean_dl < 5.0 && secs < 900.0;
    return {pass, fmt("8 images 64x64, 500 its, default weights: loss %.3f -> %.3f (first/last 10 avg, drop %.1f%%, "
                      ">= 80%%), mean |dL| %.2f (< 5), %.0fs",
                      first, last, 100.0 * drop, mean_dl, secs)};
}

// ---- 7. local discriminator ------------------------------------------------

struct PairSet {
    Tensor pos_a, pos_b, neg_a, neg_b;
};

void crop_into(const LabImage& lab, int y, int x, int s, Tensor& t, int n) {
    for (int i = 0; i < s; ++i) {
        for (int j = 0; j < s; ++j) {
            t.at(n, 0, i, j) = lab.L(y + i, x + j) / 100.0;
        }
    }
}

PairSet texture_pairs(std::uint64_t seed, int n, int s) {
    std::mt19937_64 rng(seed);
    const int side = 3 * s;
    std::uniform_int_distribution<int> off(0, side - s);
    PairSet p{Tensor({n, 1, s, s}), Tensor({n, 1, s, s}), Tensor({n, 1, s, s}), Tensor({n, 1, s, s})};
    for (int k = 0; k < n; ++k) {
        const auto a = synthetic::random_pattern(rng);
        synthetic::PatternParams b;
        do {
            b = synthetic::random_pattern(rng);
        } while (!synthetic::patterns_distinct(a, b));
        const LabImage la = colorkit::rgb_to_lab(synthetic::render_pattern(a, side, side));
        const LabImage lb = colorkit::rgb_to_lab(synthetic::render_pattern(b, side, side));
        crop_into(la, off(rng), off(rng), s, p.pos_a, k);
        crop_into(la, off(rng), off(rng), s, p.pos_b, k);
        crop_into(la, off(rng), off(rng), s, p.neg_a, k);
        crop_into(lb, off(rng), off(rng), s, p.neg_b, k);
    }
    return p;
}

Outcome local_discriminator() {
    const auto t0 = Clock::now();
    const int s = 32;
    nets::LocalDiscriminator d({16, 3}, 5);
    nn::Adam opt(d.parameters(), {1e-3, 0.5, 0.999, 1e-8});
    const PairSet held = texture_pairs(0xC0FFEE, 200, s);
    auto held_accuracy = [&] {
        ag::NoGradGuard no_grad;
        const Tensor ps = d.forward(ag::Var::constant(held.pos_a), ag::Var::constant(held.pos_b)).value();
        const Tensor ns = d.forward(ag::Var::constant(held.neg_a), ag::Var::constant(held.neg_b)).value();
        return train::pair_accuracy(ps, ns);
    };
    const double before = held_accuracy();
    for (int it = 0; it < 2000; ++it) {
        const PairSet b = texture_pairs(codec::derive_seed(1, static_cast<std::uint64_t>(it)), 16, s);
        train::local_disc_update(d, opt, ag::Var::constant(b.pos_a), ag::Var::constant(b.pos_b),
                                 ag::Var::constant(b.neg_a), ag::Var::constant(b.neg_b));
    }
    const double after = held_accuracy();
    return {after >= 0.90, fmt("2000 steps on stripes/dots/checkers pairs: held-out accuracy %.3f -> %.3f (>= 0.90) "
                               "on 400 pairs, %.0fs",
                               before, after, seconds_since(t0))};
}

// ---- 8. fine-tuning effect ---------------------------------------------------

std::vector<datagen::TextureExample> stripes(std::uint64_t seed, int count) {
    std::mt19937_64 rng(seed);
    std::vector<datagen::TextureExample> out;
    for (int i = 0; i < count; ++i) {
        const auto p = synthetic::random_pattern(rng, synthetic::Pattern::stripes);
        out.push_back({colorkit::rgb_to_lab(synthetic::render_pattern(p, kSmokeRes, kSmokeRes)),
                       "stripes-" + std::to_string(i)});
    }
    return out;
}

/// Mean style distance between generated foreground crops and the co-located
/// texture crops, over every (example, texture) pair.
double gram_distance(const nets::Generator& g, const train::Trainer& trainer, const datagen::Dataset& ds,
                     const std::vector<datagen::TextureExample>& textures, const nets::FeatureExtractor& fe) {
    ag::NoGradGuard no_grad;
    const int s = losses::default_patch_size(kSmokeRes);
    double total = 0.0;
    int count = 0;
    for (std::size_t k = 0; k < ds.examples.size() * textures.size(); ++k) {
        const auto& ex = ds.examples[k % ds.examples.size()];
        const auto& tex = textures[k / ds.examples.size()];
        const datagen::InputStack in = trainer.texture_input(ex, tex, 77 + k);
        const datagen::InputStack* one = &in;
        const Tensor out = g.forward(ag::Var::constant(datagen::input_tensor({one, 1}))).value();
        const ag::Var gen_L = ag::slice_channels(ag::Var::constant(out), 0, 1);
        const ag::Var tex_L = ag::slice_channels(ag::Var::constant(datagen::lab_tensor({&tex.texture, 1})), 0, 1);
        const auto rects = losses::sample_crop_rects(ex.mask, 4, s, 900 + k);
        const ag::Var pg = losses::gather_crops(gen_L, 0, rects);
        const ag::Var pt = losses::gather_crops(tex_L, 0, rects);
        total += losses::style_loss(pg, pt, fe).item();
        ++count;
    }
    return total / count;
}

/// Global adversarial weight for the fine-tuning run.
constexpr double kFinetuneGlobalAdv = 0.3;

Outcome finetune_effect() {
    const auto t0 = Clock::now();
    if (!g_stage1) {
        const Outcome o = overfit_smoke();
        if (!g_stage1) {
            return {false, "stage-1 checkpoint unavailable: " + o.detail};
        }
    }
    const auto ds = smoke_dataset();
    auto pool = std::make_shared<std::vector<datagen::TextureExample>>(stripes(8, 16));
    const auto held = stripes(9, 8);

    train::TrainConfig cfg = smoke_config();
    cfg.stage = train::Stage::finetune;
    cfg.iterations = 1000;
    cfg.learning_rates = train::TrainConfig{}.learning_rates;
    cfg.weights.adv = kFinetuneGlobalAdv;
    cfg.out_dir = g_work / "finetune";
    const Checkpoint stage1 = Checkpoint::load(*g_stage1);
    train::Trainer trainer(cfg, ds, pool);
    trainer.restore(stage1, true);

    const double before = gram_distance(*trainer.model().g, trainer, *ds, held, *trainer.model().features);
    int texture_its = 0;
    for (int i = 0; i < cfg.iterations; ++i) {
        texture_its += trainer.step().kind == "texture" ? 1 : 0;
    }
    const double after = gram_distance(*trainer.model().g, trainer, *ds, held, *trainer.model().features);
    const double drop = 1.0 - after / before;
    return {drop >= 0.30, fmt("1000 its (%d on stripes, global adv weight %.1f) from the stage-1 checkpoint: "
                              "foreground Gram distance %.4g -> %.4g over %zu held-out pairs (drop %.1f%%, >= 30%%), "
                              "%.0fs",
                              texture_its, kFinetuneGlobalAdv, before, after, ds->examples.size() * held.size(),
                              100.0 * drop, seconds_since(t0))};
}

// ---- 9. mixing ---------------------------------------------------------------

Outcome mixing() {
    const int span = 5000;
    std::vector<int> gt(span);
    for (int i = 0; i < span; ++i) {
        gt[static_cast<std::size_t>(i)] = train::is_ground_truth_iteration(train::Mixing::alternate, 123, i) ? 1 : 0;
    }
    int bad = 0;
    int windows = 0;
    int count = std::accumulate(gt.begin(), gt.begin() + 1000, 0);
    for (int start = 0; start + 1000 <= span; ++start) {
        if (start > 0) {
            count += gt[static_cast<std::size_t>(start + 999)] - gt[static_cast<std::size_t>(start - 1)];
        }
        bad += count == 500 ? 0 : 1;
        ++windows;
    }
    // The trainer must follow the same schedule.
    const auto ds = smoke_dataset();
    train::TrainConfig cfg = smoke_config();
    cfg.stage = train::Stage::finetune;
    cfg.batch_size = 2;
    cfg.model.base_width = 4;
    cfg.model.n_res = 1;
    cfg.model.disc_width = 4;
    cfg.model.local_disc_width = 4;
    cfg.out_dir = g_work / "mixing";
    auto pool = std::make_shared<std::vector<datagen::TextureExample>>(stripes(3, 4));
    train::Trainer trainer(cfg, ds, pool);
    int trainer_bad = 0;
    for (int i = 0; i < 6; ++i) {
        const auto rec = trainer.step();
        trainer_bad += (rec.kind == "gt") == train::is_ground_truth_iteration(train::Mixing::alternate, 0, i) ? 0 : 1;
    }
    return {bad == 0 && trainer_bad == 0,
            fmt("%d sliding 1000-iteration windows, %d without exactly 500 ground-truth iterations; trainer schedule "
                "mismatches %d/6",
                windows, bad, trainer_bad)};
}

// ---- 10. ablation switches -----------------------------------------------

Outcome ablation_switches() {
    const int res = 64;
    const int n = 2;
    const auto ds = smoke_dataset();
    const nets::TinyFeatureExtractor fe(7);
    const nets::Discriminator disc({8, 3, false}, 11);
    const nets::LocalDiscriminator local({8, 3}, 13);
    const losses::Critics critics{fe, &disc, &local};
    const losses::LossWeights w;

    std::vector<datagen::InputStack> inputs;
    std::vector<LabImage> targets;
    losses::FinetuneTargets ft;
    const auto textures = stripes(4, n);
    std::vector<LabImage> tex_images;
    for (int k = 0; k < n; ++k) {
        inputs.push_back(ds->examples[static_cast<std::size_t>(k)].input);
        targets.push_back(ds->examples[static_cast<std::size_t>(k)].target);
        tex_images.push_back(textures[static_cast<std::size_t>(k)].texture);
        ft.masks.push_back(ds->examples[static_cast<std::size_t>(k)].mask);
    }
    const Tensor target = datagen::lab_tensor(targets);
    Tensor gen = target;
    std::mt19937_64 rng(10);
    std::normal_distribution<double> noise(0.0, 0.05);
    for (double& v : gen.data()) {
        v = std::clamp(v + noise(rng), -0.99, 0.99);
    }
    Tensor gt_L(Shape{n, 1, res, res});
    for (int k = 0; k < n; ++k) {
        std::copy_n(target.plane(k, 0), target.shape().plane(), gt_L.plane(k, 0));
    }
    ft.gt_lightness = gt_L;
    ft.texture = datagen::lab_tensor(tex_images);
    ft.mask = datagen::mask_tensor(ft.masks);
    ft.sketch = Tensor(Shape{n, 1, res, res});
    ft.local = {losses::default_patch_size(res), 1};
    ft.seed = 42;
    losses::PretrainTargets pt;
    pt.target = target;
    pt.sketch = ft.sketch;

    // Pretrain carries the global style term; finetune carries the local ones.
    auto reports = [&](const losses::Ablation& a) {
        const ag::Var out = ag::Var::constant(gen);
        const auto p = losses::pretrain_objective(out, pt, critics, w, a).report;
        const auto f = losses::finetune_objective(out, ft, critics, w, a).report;
        return std::pair{p, f};
    };
    const auto base = reports({});
    const std::vector<std::pair<std::string, std::set<std::string>>> cases = {
        {"style", {"style", "local_style"}},
        {"adversarial", {"adv", "local_adv"}},
        {"local_texture", {"local_style", "local_pixel", "local_adv"}}};
    std::vector<std::string> problems;
    for (const auto& [name, zeroed] : cases) {
        losses::Ablation a;
        a.style = name == "style";
        a.adversarial = name == "adversarial";
        a.local_texture = name == "local_texture";
        const auto got = reports(a);
        for (int which = 0; which < 2; ++which) {
            const auto& r = which == 0 ? got.first : got.second;
            const auto& b = which == 0 ? base.first : base.second;
            const char* obj = which == 0 ? "pretrain" : "finetune";
            if (!r.finite()) {
                problems.push_back(name + "/" + obj + ": non-finite report");
            }
            for (std::string_view key : losses::LossReport::kKeys) {
                if (key == "total") {
                    continue;
                }
                const std::string k(key);
                if (zeroed.contains(k)) {
                    if (r.get(key) != 0.0) {
                        problems.push_back(name + "/" + obj + ": " + k + " not zeroed");
                    }
                } else if (r.get(key) != b.get(key)) {
                    problems.push_back(name + "/" + obj + ": " + k + " changed");
                }
            }
        }
    }
    // Every switched term must be live in the baseline, otherwise zeroing proves nothing.
    for (const char* k : {"style", "adv"}) {
        if (base.first.get(k) == 0.0) {
            problems.push_back(std::string("baseline pretrain ") + k + " is zero");
        }
    }
    for (const char* k : {"local_style", "local_pixel", "local_adv", "adv"}) {
        if (base.second.get(k) == 0.0) {
            problems.push_back(std::string("baseline finetune ") + k + " is zero");
        }
    }
    std::string detail = "style, adversarial, local_texture on both objectives: ";
    if (problems.empty()) {
        detail += "targeted entries exactly 0, all others finite and unchanged";
    } else {
        for (const auto& p : problems) {
            detail += p + "; ";
        }
    }
    return {problems.empty(), detail};
}

// ---- 11. service contract ------------------------------------------------

Outcome service_contract() {
    const int res = 64;
    service::ServiceConfig cfg;
    cfg.port = 0;
    service::Server server(cfg);
    server.handler().set_backend(std::make_shared<infer::StubBackend>(128));
    const int port = server.start();
    httplib::Client client("127.0.0.1", port);
    client.set_read_timeout(30, 0);

    BinaryMap sketch(res, res);
    for (int i = 10; i < 54; ++i) {
        sketch(10, i) = sketch(53, i) = sketch(i, 10) = sketch(i, 53) = 1;
    }
    infer::SynthesisRequest req;
    req.sketch = sketch;
    req.resolution = res;
    req.textures.push_back(
        {synthetic::render_pattern(synthetic::PatternParams{}, 20, 20), Rect{12, 12, 30, 24}});
    req.colors.push_back({infer::parse_hex_color("#3366cc"), Rect{30, 30, 16, 16}});
    const std::string body = service::to_dto(req).dump();

    std::vector<std::string> problems;
    const auto r1 = client.Post("/v1/synthesize", body, "application/json");
    const auto r2 = client.Post("/v1/synthesize", body, "application/json");
    if (!r1 || r1->status != 200) {
        problems.push_back("valid request status " + std::to_string(r1 ? r1->status : -1));
    } else {
        if (r1->get_header_value("Content-Type") != "image/png") {
            problems.push_back("content type " + r1->get_header_value("Content-Type"));
        }
        const std::vector<std::uint8_t> png(r1->body.begin(), r1->body.end());
        const RgbImage img = io::decode_image(png);
        if (img.height != res || img.width != res) {
            problems.push_back(fmt("png is %dx%d", img.width, img.height));
        }
        if (!r2 || r2->body != r1->body) {
            problems.push_back("identical requests gave different bodies");
        }
    }

    nlohmann::json bad = nlohmann::json::parse(body);
    std::string b64 = bad["sketch"];
    bad["sketch"] = b64.substr(0, b64.size() - 3);
    const auto r3 = client.Post("/v1/synthesize", bad.dump(), "application/json");
    std::string field;
    if (r3) {
        field = nlohmann::json::parse(r3->body).value("field", std::string());
    }
    if (!r3 || r3->status != 400 || field != "sketch") {
        problems.push_back("truncated base64 -> " + std::to_string(r3 ? r3->status : -1) + " field '" + field + "'");
    }
    server.stop();

    std::string detail = "stub backend over HTTP: ";
    if (problems.empty()) {
        detail += "valid -> 200 image/png 64x64, identical requests byte-identical, truncated base64 -> 400 (field "
                  "\"sketch\")";
    } else {
        for (const auto& p : problems) {
            detail += p + "; ";
        }
    }
    return {problems.empty(), detail};
}

struct Criterion {
    int id;
    const char* name;
    Outcome (*run)();
};

const std::vector<Criterion> kCriteria = {
    {1, "color roundtrip", color_roundtrip},
    {2, "gram oracle", gram_oracle},
    {3, "gradient routing", gradient_routing},
    {4, "finite-difference gradients", finite_differences},
    {5, "patch sampling", patch_sampling},
    {6, "overfit smoke", overfit_smoke},
    {7, "local discriminator", local_discriminator},
    {8, "fine-tuning effect", finetune_effect},
    {9, "mixing", mixing},
    {10, "ablation switches", ablation_switches},
    {11, "service contract", service_contract},
};

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    fs::path work;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--only" && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            for (std::string tok; std::getline(ss, tok, ',');) {
                only.insert(std::stoi(tok));
            }
        } else if (a == "--work" && i + 1 < argc) {
            work = argv[++i];
        } else {
            std::cerr << "usage: acceptance [--only N[,N...]] [--work DIR]\n";
            return 2;
        }
    }
    g_work = work.empty() ? fs::temp_directory_path() / ("tgan-acceptance-" + std::to_string(::getpid())) : work;
    fs::create_directories(g_work);

    int failed = 0;
    for (const auto& c : kCriteria) {
        if (!only.empty() && !only.contains(c.id)) {
            continue;
        }
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << c.id << ". " << c.name << ": " << o.detail << std::endl;
    }
    if (work.empty()) {
        std::error_code ec;
        fs::remove_all(g_work, ec);
    }
    return failed == 0 ? 0 : 1;
}
