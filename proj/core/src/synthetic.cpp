/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "tgan/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>

#include "tgan/codec.hpp"
#include "tgan/errors.hpp"
#include "tgan/image_io.hpp"

namespace tgan::synthetic {

namespace {

constexpr double kPi = std::numbers::pi;

double frac(double v) { return v - std::floor(v); }

/// Ink coverage in {0,1} at a continuous position.
double ink_at(const PatternParams& p, double x, double y) {
    const double c = std::cos(p.angle);
    const double s = std::sin(p.angle);
    const double u = (x * c + y * s) / p.period + p.phase_u;
    const double v = (-x * s + y * c) / p.period + p.phase_v;
    switch (p.kind) {
        case Pattern::stripes:
            return frac(u) < p.duty ? 1.0 : 0.0;
        case Pattern::dots: {
            const double du = frac(u) - 0.5;
            const double dv = frac(v) - 0.5;
            return std::sqrt(du * du + dv * dv) < 0.5 * p.duty ? 1.0 : 0.0;
        }
        case Pattern::checkers:
            return ((static_cast<long long>(std::floor(u)) + static_cast<long long>(std::floor(v))) & 1) ? 1.0 : 0.0;
    }
    return 0.0;
}

colorkit::Rgb random_color(std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> level(lo, hi);
    std::uniform_real_distribution<double> tint(-0.12, 0.12);
    const double base = level(rng);
    auto ch = [&](double t) { return std::clamp(base + t, 0.02, 0.9); };
    return {ch(tint(rng)), ch(tint(rng)), ch(tint(rng))};
}

double angle_gap(double a, double b, double symmetry) {
    const double d = std::fmod(std::abs(a - b), symmetry);
    return std::min(d, symmetry - d);
}

}  // namespace

Pattern parse_pattern(std::string_view s) {
    if (s == "stripes") {
        return Pattern::stripes;
    }
    if (s == "dots") {
        return Pattern::dots;
    }
    if (s == "checkers") {
        return Pattern::checkers;
    }
    throw ConfigError("unknown pattern '" + std::string(s) + "' (expected stripes, dots or checkers)");
}

std::string_view to_string(Pattern p) {
    switch (p) {
        case Pattern::stripes:
            return "stripes";
        case Pattern::dots:
            return "dots";
        case Pattern::checkers:
            return "checkers";
    }
    return "stripes";
}

PatternParams random_pattern(std::mt19937_64& rng, std::optional<Pattern> kind, const PatternRange& range) {
    std::uniform_int_distribution<int> family(0, 2);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    PatternParams p;
    p.kind = kind ? *kind : static_cast<Pattern>(family(rng));
    p.period = range.min_period * std::pow(range.max_period / range.min_period, unit(rng));
    p.angle = unit(rng) * kPi;
    p.phase_u = unit(rng);
    p.phase_v = unit(rng);
    p.duty = p.kind == Pattern::dots ? 0.55 + 0.3 * unit(rng) : 0.35 + 0.3 * unit(rng);
    p.ink = random_color(rng, 0.05, 0.35);
    p.paper = random_color(rng, 0.6, 0.85);
    return p;
}

PatternParams rephase(const PatternParams& p, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    PatternParams q = p;
    q.phase_u = unit(rng);
    q.phase_v = unit(rng);
    return q;
}

bool patterns_distinct(const PatternParams& a, const PatternParams& b) {
    if (a.kind != b.kind) {
        return true;
    }
    const double ratio = std::max(a.period, b.period) / std::min(a.period, b.period);
    const double symmetry = a.kind == Pattern::stripes ? kPi : kPi / 2.0;
    return ratio > 1.4 || angle_gap(a.angle, b.angle, symmetry) > kPi / 6.0;
}

RgbImage render_pattern(const PatternParams& p, int height, int width) {
    if (p.period <= 0.0) {
        throw ConfigError("pattern period must be positive");
    }
    RgbImage img(height, width);
    const std::array<double, 3> ink = {p.ink.r, p.ink.g, p.ink.b};
    const std::array<double, 3> paper = {p.paper.r, p.paper.g, p.paper.b};
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double cover = 0.0;
            for (double sy : {0.25, 0.75}) {
                for (double sx : {0.25, 0.75}) {
                    cover += ink_at(p, x + sx, y + sy);
                }
            }
            cover *= 0.25;
            for (int c = 0; c < 3; ++c) {
                img.at(y, x, c) = static_cast<float>(cover * ink[c] + (1.0 - cover) * paper[c]);
            }
        }
    }
    return img;
}

namespace {

bool inside_shape(Silhouette shape, double u, double v) {
    // u, v in [-1, 1] over the object's bounding box.
    switch (shape) {
        case Silhouette::ellipse:
            return u * u + v * v <= 1.0;
        case Silhouette::rounded_box: {
            const double r = 0.35;
            const double du = std::max(std::abs(u) - (1.0 - r), 0.0);
            const double dv = std::max(std::abs(v) - (1.0 - r), 0.0);
            return du * du + dv * dv <= r * r;
        }
        case Silhouette::shirt: {
            const bool body = std::abs(u) <= 0.55 && v >= -0.75 && v <= 1.0;
            const bool sleeves = v >= -0.75 && v <= -0.75 + 0.6 * (1.0 - std::abs(u)) + 0.15 && std::abs(u) <= 1.0;
            const bool neck = u * u + (v + 0.8) * (v + 0.8) <= 0.06;
            return (body || sleeves) && !neck;
        }
    }
    return false;
}

}  // namespace

RgbImage product_photo(std::uint64_t seed, int resolution, const ProductOptions& options) {
    if (resolution <= 0) {
        throw ConfigError("resolution must be positive");
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick_shape(0, 2);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const Silhouette sil = options.shape ? *options.shape : static_cast<Silhouette>(pick_shape(rng));
    PatternRange range;
    range.min_period = std::max(3.0, resolution * options.min_period);
    range.max_period = std::max(range.min_period + 1.0, resolution * options.max_period);
    const PatternParams pattern = random_pattern(rng, std::nullopt, range);
    const RgbImage fill = render_pattern(pattern, resolution, resolution);

    const double half_w = resolution * (0.3 + 0.12 * unit(rng));
    const double half_h = resolution * (0.32 + 0.1 * unit(rng));
    const double cx = resolution * (0.5 + 0.06 * (unit(rng) - 0.5));
    const double cy = resolution * (0.5 + 0.06 * (unit(rng) - 0.5));

    RgbImage img(resolution, resolution, 1.0f);
    for (int y = 0; y < resolution; ++y) {
        for (int x = 0; x < resolution; ++x) {
            const double u = (x + 0.5 - cx) / half_w;
            const double v = (y + 0.5 - cy) / half_h;
            if (!inside_shape(sil, u, v)) {
                continue;
            }
            const double shade = 0.88 + 0.12 * std::cos(0.5 * kPi * std::clamp(u, -1.0, 1.0));
            for (int c = 0; c < 3; ++c) {
                img.at(y, x, c) = static_cast<float>(fill.at(y, x, c) * shade);
            }
        }
    }
    return img;
}

void write_sample_collection(const std::filesystem::path& out, int photos, int textures, int resolution,
                             std::uint64_t seed) {
    std::filesystem::create_directories(out / "photos");
    std::filesystem::create_directories(out / "textures");
    char name[64];
    for (int i = 0; i < photos; ++i) {
        std::snprintf(name, sizeof name, "product-%03d.png", i);
        io::write_png(out / "photos" / name,
                      product_photo(codec::derive_seed(seed, "photo-" + std::to_string(i)), resolution));
    }
    for (int i = 0; i < textures; ++i) {
        std::mt19937_64 rng(codec::derive_seed(seed, "texture-" + std::to_string(i)));
        PatternRange range;
        range.min_period = std::max(3.0, resolution / 16.0);
        range.max_period = std::max(range.min_period + 1.0, resolution / 6.0);
        const int side = resolution * 2;
        std::snprintf(name, sizeof name, "texture-%03d.png", i);
        io::write_png(out / "textures" / name, render_pattern(random_pattern(rng, std::nullopt, range), side, side));
    }
}

}  // namespace tgan::synthetic
