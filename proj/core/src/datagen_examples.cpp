/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include "tgan/codec.hpp"
#include "tgan/colorkit.hpp"
#include "tgan/datagen.hpp"
#include "tgan/image_io.hpp"

namespace tgan::datagen {

InputStack InputStack::blank(int height, int width) {
    return {BinaryMap(height, width), Plane<float>(height, width), BinaryMap(height, width),
            Plane<float>(height, width, kColorSentinel), Plane<float>(height, width, kColorSentinel)};
}

void InputStack::validate() const {
    const int h = height();
    const int w = width();
    if (h <= 0 || w <= 0 || !tex_intensity.same_extent(h, w) || !tex_mask.same_extent(h, w) ||
        !color_a.same_extent(h, w) || !color_b.same_extent(h, w)) {
        throw ValidationError("input stack channels disagree in extent");
    }
    for (std::size_t i = 0; i < sketch.size(); ++i) {
        if (sketch.values[i] > 1 || tex_mask.values[i] > 1) {
            throw ValidationError("sketch and texture mask must be binary");
        }
        const float t = tex_intensity.values[i];
        if (!(t >= 0.0f && t <= 1.0f)) {
            throw ValidationError("texture intensity outside [0,1] at index " + std::to_string(i));
        }
        if (tex_mask.values[i] == 0 && t != 0.0f) {
            throw ValidationError("texture intensity set outside the texture mask at index " + std::to_string(i));
        }
        const bool sa = color_a.values[i] == kColorSentinel;
        const bool sb = color_b.values[i] == kColorSentinel;
        if (sa != sb) {
            throw ValidationError("color sentinel set in only one of a/b at index " + std::to_string(i));
        }
        if (!sa && (std::abs(color_a.values[i]) > 1.0f || std::abs(color_b.values[i]) > 1.0f)) {
            throw ValidationError("normalized color outside [-1,1] at index " + std::to_string(i));
        }
    }
}

// ---- placements ----------------------------------------------------------

PlacementConfig placement_defaults(int resolution) {
    PlacementConfig cfg;
    cfg.min_size = std::max(2, resolution * 24 / 128);
    cfg.max_size = std::max(cfg.min_size, resolution * 64 / 128);
    return cfg;
}

double overlap_fraction(const SegmentationMask& mask, const Rect& r) {
    if (!r.inside(mask.height(), mask.width())) {
        throw ValidationError("rectangle " + r.str() + " outside mask");
    }
    std::size_t inside = 0;
    for (int y = r.y; y < r.y + r.h; ++y) {
        for (int x = r.x; x < r.x + r.w; ++x) {
            inside += mask.mask(y, x);
        }
    }
    return static_cast<double>(inside) / (static_cast<double>(r.w) * r.h);
}

namespace {

/// Summed-area table for O(1) rectangle overlap queries.
class IntegralMask {
public:
    explicit IntegralMask(const BinaryMap& m) : w_(m.width + 1), sums_(static_cast<std::size_t>(m.height + 1) * (m.width + 1)) {
        for (int y = 0; y < m.height; ++y) {
            for (int x = 0; x < m.width; ++x) {
                at(y + 1, x + 1) = m(y, x) + at(y, x + 1) + at(y + 1, x) - at(y, x);
            }
        }
    }
    [[nodiscard]] double overlap(const Rect& r) const {
        const auto s = at(r.y + r.h, r.x + r.w) - at(r.y, r.x + r.w) - at(r.y + r.h, r.x) + at(r.y, r.x);
        return static_cast<double>(s) / (static_cast<double>(r.w) * r.h);
    }

private:
    std::int64_t& at(int y, int x) { return sums_[static_cast<std::size_t>(y) * w_ + x]; }
    [[nodiscard]] std::int64_t at(int y, int x) const { return sums_[static_cast<std::size_t>(y) * w_ + x]; }
    int w_;
    std::vector<std::int64_t> sums_;
};

}  // namespace

PatchPlacement sample_patch_placement(const SegmentationMask& mask, std::uint64_t seed, const PlacementConfig& cfg) {
    const int h = mask.height();
    const int w = mask.width();
    if (cfg.min_size <= 0 || cfg.max_size < cfg.min_size) {
        throw ConfigError("placement sizes must satisfy 0 < min_size <= max_size");
    }
    if (cfg.min_size > std::min(h, w)) {
        throw SamplingError("minimum patch size " + std::to_string(cfg.min_size) + " exceeds the " +
                            std::to_string(h) + "x" + std::to_string(w) + " mask");
    }
    std::vector<std::uint32_t> fg;
    for (std::size_t i = 0; i < mask.mask.size(); ++i) {
        if (mask.mask.values[i]) {
            fg.push_back(static_cast<std::uint32_t>(i));
        }
    }
    if (fg.empty()) {
        throw SamplingError("mask has no foreground to place a patch on");
    }
    const IntegralMask integral(mask.mask);
    std::mt19937_64 rng(seed);
    const int max_size = std::min({cfg.max_size, h, w});
    int size = std::uniform_int_distribution<int>(cfg.min_size, max_size)(rng);
    std::uniform_int_distribution<std::size_t> pick(0, fg.size() - 1);
    for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
        const std::uint32_t idx = fg[pick(rng)];
        const int cy = static_cast<int>(idx / static_cast<std::uint32_t>(w));
        const int cx = static_cast<int>(idx % static_cast<std::uint32_t>(w));
        const Rect r{std::clamp(cx - size / 2, 0, w - size), std::clamp(cy - size / 2, 0, h - size), size, size};
        const double ov = integral.overlap(r);
        if (ov >= cfg.min_overlap) {
            return {r, ov};
        }
        size = std::max(cfg.min_size, static_cast<int>(size * cfg.shrink));
    }
    throw SamplingError("no placement with overlap >= " + std::to_string(cfg.min_overlap) + " after " +
                        std::to_string(cfg.max_retries) + " attempts");
}

// ---- examples ------------------------------------------------------------

namespace {

Plane<std::uint16_t> resize_regions(const Plane<std::uint16_t>& r, int h, int w) {
    if (r.same_extent(h, w)) {
        return r;
    }
    Plane<std::uint16_t> out(h, w);
    for (int y = 0; y < h; ++y) {
        const int sy = std::min(r.height - 1, static_cast<int>((y + 0.5) * r.height / h));
        for (int x = 0; x < w; ++x) {
            out(y, x) = r(sy, std::min(r.width - 1, static_cast<int>((x + 0.5) * r.width / w)));
        }
    }
    return out;
}

void paste_intensity(InputStack& in, const LabImage& target, const Rect& r) {
    for (int y = r.y; y < r.y + r.h; ++y) {
        for (int x = r.x; x < r.x + r.w; ++x) {
            in.tex_intensity(y, x) = std::clamp(target.L(y, x) / 100.0f, 0.0f, 1.0f);
            in.tex_mask(y, x) = 1;
        }
    }
}

}  // namespace

TrainingExample make_training_example(const RgbImage& source, std::uint64_t seed, const ExampleConfig& cfg,
                                      std::string source_id, const ExampleExtras& extras) {
    const int res = cfg.resolution;
    if (res <= 0) {
        throw ConfigError("resolution must be positive");
    }
    if (cfg.max_patches != 1 && cfg.max_patches != 2) {
        throw ConfigError("max_patches must be 1 or 2");
    }
    const RgbImage photo = resize_bilinear(source, res, res);
    photo.validate();

    std::optional<BinaryMap> provided;
    if (extras.provided_mask) {
        provided = resize_nearest(*extras.provided_mask, res, res);
    }
    MaskInputs mi;
    mi.white_threshold = cfg.white_threshold;
    mi.image_name = source_id;
    mi.provided = provided ? &*provided : nullptr;

    TrainingExample ex;
    ex.source_id = source_id;
    BinaryMap sketch;
    if (cfg.mask_mode == MaskMode::sketch_fill) {
        if (cfg.sketch == SketchMethod::mask_canny) {
            throw ConfigError("sketch_fill masks need a photo-based sketch method (xdog or learned_edges)");
        }
        sketch = generate_sketch(photo, SegmentationMask{BinaryMap(res, res)}, cfg.sketch, cfg.sketch_options);
        mi.sketch = &sketch;
        ex.mask = compute_foreground_mask(photo, cfg.mask_mode, mi);
    } else {
        ex.mask = compute_foreground_mask(photo, cfg.mask_mode, mi);
        sketch = generate_sketch(photo, ex.mask, cfg.sketch, cfg.sketch_options);
    }

    ex.target = colorkit::rgb_to_lab(photo);
    for (std::size_t i = 0; i < ex.mask.mask.size(); ++i) {
        if (!ex.mask.mask.values[i]) {
            ex.target.L.values[i] = 100.0f;
            ex.target.a.values[i] = 0.0f;
            ex.target.b.values[i] = 0.0f;
        }
    }

    ex.input = InputStack::blank(res, res);
    ex.input.sketch = std::move(sketch);

    int patches = 1;
    if (cfg.max_patches == 2) {
        std::mt19937_64 coin(codec::derive_seed(seed, "patch-count"));
        patches = std::bernoulli_distribution(cfg.two_patch_probability)(coin) ? 2 : 1;
    }

    // Distinct semantic regions when labels are available.
    std::vector<SegmentationMask> sources;
    if (extras.regions) {
        const auto regions = resize_regions(*extras.regions, res, res);
        std::vector<std::uint16_t> ids;
        for (std::size_t i = 0; i < regions.size(); ++i) {
            if (regions.values[i] && ex.mask.mask.values[i]) {
                ids.push_back(regions.values[i]);
            }
        }
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
        std::mt19937_64 rng(codec::derive_seed(seed, "regions"));
        std::shuffle(ids.begin(), ids.end(), rng);
        for (std::size_t k = 0; k < ids.size() && static_cast<int>(sources.size()) < patches; ++k) {
            SegmentationMask m{BinaryMap(res, res)};
            for (std::size_t i = 0; i < regions.size(); ++i) {
                m.mask.values[i] = (regions.values[i] == ids[k] && ex.mask.mask.values[i]) ? 1 : 0;
            }
            sources.push_back(std::move(m));
        }
    }
    while (static_cast<int>(sources.size()) < patches) {
        sources.push_back(ex.mask);
    }

    for (int p = 0; p < patches; ++p) {
        const SegmentationMask& src = sources[static_cast<std::size_t>(p)];
        PatchPlacement placement;
        // Second patch: a few attempts at a placement disjoint from the first.
        constexpr int kDisjointAttempts = 8;
        for (int attempt = 0; attempt < kDisjointAttempts; ++attempt) {
            placement = sample_patch_placement(
                src, codec::derive_seed(seed, "texture-" + std::to_string(p) + "-" + std::to_string(attempt)),
                cfg.placement);
            const bool clash = std::any_of(ex.texture_placements.begin(), ex.texture_placements.end(),
                                           [&](const PatchPlacement& q) { return q.rect.intersects(placement.rect); });
            if (!clash) {
                break;
            }
        }
        paste_intensity(ex.input, ex.target, placement.rect);
        ex.texture_placements.push_back(placement);
    }

    const PatchPlacement color = sample_patch_placement(ex.mask, codec::derive_seed(seed, "color"), cfg.placement);
    for (int y = color.rect.y; y < color.rect.y + color.rect.h; ++y) {
        for (int x = color.rect.x; x < color.rect.x + color.rect.w; ++x) {
            ex.input.color_a(y, x) = ex.target.a(y, x) / 128.0f;
            ex.input.color_b(y, x) = ex.target.b(y, x) / 128.0f;
        }
    }
    ex.color_placement = color;
    return ex;
}

// ---- textures ------------------------------------------------------------

std::vector<TextureExample> texture_crops(const RgbImage& img, const std::string& name, const TextureIngestConfig& cfg) {
    const int res = cfg.resolution;
    RgbImage base = img;
    if (std::min(img.height, img.width) < res) {
        const double s = static_cast<double>(res) / std::min(img.height, img.width);
        base = resize_bilinear(img, std::max(res, static_cast<int>(std::ceil(img.height * s))),
                               std::max(res, static_cast<int>(std::ceil(img.width * s))));
    }
    std::vector<TextureExample> out;
    out.reserve(static_cast<std::size_t>(cfg.crops_per_image));
    for (int i = 0; i < cfg.crops_per_image; ++i) {
        const std::string id = name + "#" + std::to_string(i);
        std::mt19937_64 rng(codec::derive_seed(cfg.seed, id));
        const int x = std::uniform_int_distribution<int>(0, base.width - res)(rng);
        const int y = std::uniform_int_distribution<int>(0, base.height - res)(rng);
        out.push_back({colorkit::rgb_to_lab(crop(base, Rect{x, y, res, res})), id});
    }
    return out;
}

std::vector<TextureExample> ingest_texture_dir(const std::filesystem::path& dir, const TextureIngestConfig& cfg) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) {
        throw ConfigError("texture directory " + dir.string() + " does not exist");
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) {
            continue;
        }
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
    if (files.empty()) {
        throw ConfigError("texture directory " + dir.string() + " contains no images");
    }
    std::vector<TextureExample> out;
    for (const auto& f : files) {
        RgbImage img;
        try {
            img = io::read_image(f);
        } catch (const std::exception& e) {
            spdlog::warn("skipping texture {}: {}", f.string(), e.what());
            continue;
        }
        auto crops = texture_crops(img, f.filename().string(), cfg);
        std::move(crops.begin(), crops.end(), std::back_inserter(out));
    }
    if (out.empty()) {
        throw ConfigError("no decodable textures in " + dir.string());
    }
    spdlog::info("ingested {} texture crops from {} files in {}", out.size(), files.size(), dir.string());
    return out;
}

// ---- network-facing tensors ----------------------------------------------

Tensor input_tensor(std::span<const InputStack> inputs) {
    if (inputs.empty()) {
        throw ShapeError("input_tensor: empty batch");
    }
    const int h = inputs.front().height();
    const int w = inputs.front().width();
    Tensor t(Shape{static_cast<int>(inputs.size()), InputStack::kChannels, h, w});
    for (std::size_t n = 0; n < inputs.size(); ++n) {
        const auto& in = inputs[n];
        if (in.height() != h || in.width() != w) {
            throw ShapeError("input_tensor: mixed resolutions in batch");
        }
        const int ni = static_cast<int>(n);
        for (std::size_t i = 0; i < in.sketch.size(); ++i) {
            t.plane(ni, 0)[i] = in.sketch.values[i];
            t.plane(ni, 1)[i] = in.tex_intensity.values[i];
            t.plane(ni, 2)[i] = in.tex_mask.values[i];
            t.plane(ni, 3)[i] = in.color_a.values[i];
            t.plane(ni, 4)[i] = in.color_b.values[i];
        }
    }
    return t;
}

Tensor lab_tensor(std::span<const LabImage> images) {
    if (images.empty()) {
        throw ShapeError("lab_tensor: empty batch");
    }
    const int h = images.front().height();
    const int w = images.front().width();
    Tensor t(Shape{static_cast<int>(images.size()), 3, h, w});
    for (std::size_t n = 0; n < images.size(); ++n) {
        const auto& img = images[n];
        if (img.height() != h || img.width() != w) {
            throw ShapeError("lab_tensor: mixed resolutions in batch");
        }
        const int ni = static_cast<int>(n);
        for (std::size_t i = 0; i < img.L.size(); ++i) {
            t.plane(ni, 0)[i] = img.L.values[i] / 100.0;
            t.plane(ni, 1)[i] = img.a.values[i] / 128.0;
            t.plane(ni, 2)[i] = img.b.values[i] / 128.0;
        }
    }
    return t;
}

Tensor mask_tensor(std::span<const SegmentationMask> masks) {
    if (masks.empty()) {
        throw ShapeError("mask_tensor: empty batch");
    }
    Tensor t(Shape{static_cast<int>(masks.size()), 1, masks.front().height(), masks.front().width()});
    for (std::size_t n = 0; n < masks.size(); ++n) {
        if (masks[n].mask.size() != t.shape().plane()) {
            throw ShapeError("mask_tensor: mixed resolutions in batch");
        }
        for (std::size_t i = 0; i < masks[n].mask.size(); ++i) {
            t.plane(static_cast<int>(n), 0)[i] = masks[n].mask.values[i];
        }
    }
    return t;
}

LabImage lab_from_tensor(const Tensor& t, int n) {
    const Shape s = t.shape();
    if (s.c != 3 || n < 0 || n >= s.n) {
        throw ShapeError("lab_from_tensor: bad tensor " + s.str());
    }
    LabImage img(s.h, s.w);
    for (std::size_t i = 0; i < s.plane(); ++i) {
        img.L.values[i] = static_cast<float>(std::clamp(t.plane(n, 0)[i] * 100.0, 0.0, 100.0));
        img.a.values[i] = static_cast<float>(std::clamp(t.plane(n, 1)[i] * 128.0, -128.0, 128.0));
        img.b.values[i] = static_cast<float>(std::clamp(t.plane(n, 2)[i] * 128.0, -128.0, 128.0));
    }
    return img;
}

}  // namespace tgan::datagen
