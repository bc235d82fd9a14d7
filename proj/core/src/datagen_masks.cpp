/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include <algorithm>
#include <cmath>
#include <deque>

#include "tgan/datagen.hpp"

namespace tgan::datagen {

std::size_t SegmentationMask::foreground() const {
    return static_cast<std::size_t>(std::count(mask.values.begin(), mask.values.end(), std::uint8_t{1}));
}

double SegmentationMask::coverage() const {
    return mask.size() == 0 ? 0.0 : static_cast<double>(foreground()) / static_cast<double>(mask.size());
}

MaskMode parse_mask_mode(std::string_view s) {
    if (s == "white_background") return MaskMode::white_background;
    if (s == "provided") return MaskMode::provided;
    if (s == "sketch_fill") return MaskMode::sketch_fill;
    throw ConfigError("unknown mask mode '" + std::string(s) + "'");
}

std::string_view to_string(MaskMode m) {
    switch (m) {
        case MaskMode::white_background: return "white_background";
        case MaskMode::provided: return "provided";
        case MaskMode::sketch_fill: return "sketch_fill";
    }
    return "?";
}

SketchMethod parse_sketch_method(std::string_view s) {
    if (s == "mask_canny") return SketchMethod::mask_canny;
    if (s == "xdog") return SketchMethod::xdog;
    if (s == "learned_edges") return SketchMethod::learned_edges;
    throw ConfigError("unknown sketch method '" + std::string(s) + "'");
}

std::string_view to_string(SketchMethod m) {
    switch (m) {
        case SketchMethod::mask_canny: return "mask_canny";
        case SketchMethod::xdog: return "xdog";
        case SketchMethod::learned_edges: return "learned_edges";
    }
    return "?";
}

namespace {

BinaryMap fill_from_border(const BinaryMap& strokes) {
    const int h = strokes.height;
    const int w = strokes.width;
    BinaryMap reached(h, w);
    std::deque<std::pair<int, int>> queue;
    auto push = [&](int y, int x) {
        if (y >= 0 && y < h && x >= 0 && x < w && !strokes(y, x) && !reached(y, x)) {
            reached(y, x) = 1;
            queue.emplace_back(y, x);
        }
    };
    for (int x = 0; x < w; ++x) {
        push(0, x);
        push(h - 1, x);
    }
    for (int y = 0; y < h; ++y) {
        push(y, 0);
        push(y, w - 1);
    }
    while (!queue.empty()) {
        const auto [y, x] = queue.front();
        queue.pop_front();
        push(y - 1, x);
        push(y + 1, x);
        push(y, x - 1);
        push(y, x + 1);
    }
    return reached;
}

}  // namespace

SegmentationMask compute_foreground_mask(const RgbImage& photo, MaskMode mode, const MaskInputs& inputs) {
    photo.validate();
    SegmentationMask result{BinaryMap(photo.height, photo.width)};
    switch (mode) {
        case MaskMode::white_background: {
            const auto tau = static_cast<float>(inputs.white_threshold);
            for (int y = 0; y < photo.height; ++y) {
                for (int x = 0; x < photo.width; ++x) {
                    const float lo = std::min({photo.at(y, x, 0), photo.at(y, x, 1), photo.at(y, x, 2)});
                    result.mask(y, x) = lo > tau ? 0 : 1;
                }
            }
            break;
        }
        case MaskMode::provided: {
            if (!inputs.provided) {
                throw ConfigError("mask mode 'provided' needs a mask for " + std::string(inputs.image_name));
            }
            if (!inputs.provided->same_extent(photo.height, photo.width)) {
                throw ShapeError("provided mask extent differs from " + std::string(inputs.image_name));
            }
            for (std::size_t i = 0; i < result.mask.size(); ++i) {
                result.mask.values[i] = inputs.provided->values[i] ? 1 : 0;
            }
            break;
        }
        case MaskMode::sketch_fill: {
            if (!inputs.sketch) {
                throw ConfigError("mask mode 'sketch_fill' needs a sketch for " + std::string(inputs.image_name));
            }
            if (!inputs.sketch->same_extent(photo.height, photo.width)) {
                throw ShapeError("sketch extent differs from " + std::string(inputs.image_name));
            }
            const BinaryMap outside = fill_from_border(*inputs.sketch);
            for (std::size_t i = 0; i < result.mask.size(); ++i) {
                result.mask.values[i] = outside.values[i] ? 0 : 1;
            }
            break;
        }
    }
    if (result.foreground() == 0) {
        throw MaskRejected("image '" + std::string(inputs.image_name) + "' has no foreground pixels");
    }
    return result;
}

// ---- sketches ------------------------------------------------------------

namespace {

Plane<double> luminance(const RgbImage& img) {
    Plane<double> out(img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            out(y, x) = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
        }
    }
    return out;
}

Plane<double> gaussian_blur(const Plane<double>& in, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        total += kernel[i + radius];
    }
    for (double& k : kernel) {
        k /= total;
    }
    const int h = in.height;
    const int w = in.width;
    Plane<double> tmp(h, w);
    Plane<double> out(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                acc += kernel[i + radius] * in(y, std::clamp(x + i, 0, w - 1));
            }
            tmp(y, x) = acc;
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                acc += kernel[i + radius] * tmp(std::clamp(y + i, 0, h - 1), x);
            }
            out(y, x) = acc;
        }
    }
    return out;
}

}  // namespace

Plane<float> xdog_response(const RgbImage& photo, const XdogParams& p) {
    const Plane<double> lum = luminance(photo);
    const Plane<double> g1 = gaussian_blur(lum, p.sigma);
    const Plane<double> g2 = gaussian_blur(lum, p.sigma * p.k);
    Plane<float> out(photo.height, photo.width);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double d = g1.values[i] - p.tau * g2.values[i];
        const double t = d >= p.epsilon ? 1.0 : 1.0 + std::tanh(p.phi * (d - p.epsilon));
        out.values[i] = static_cast<float>(std::clamp(t, 0.0, 1.0));
    }
    return out;
}

BinaryMap generate_sketch(const RgbImage& photo, const SegmentationMask& mask, SketchMethod method,
                          const SketchOptions& options) {
    switch (method) {
        case SketchMethod::mask_canny: {
            const BinaryMap& m = mask.mask;
            if (!m.same_extent(photo.height, photo.width)) {
                throw ShapeError("mask and photo are not aligned");
            }
            BinaryMap out(m.height, m.width);
            for (int y = 0; y < m.height; ++y) {
                for (int x = 0; x < m.width; ++x) {
                    if (!m(y, x)) {
                        continue;
                    }
                    const bool edge = (y > 0 && !m(y - 1, x)) || (y + 1 < m.height && !m(y + 1, x)) ||
                                      (x > 0 && !m(y, x - 1)) || (x + 1 < m.width && !m(y, x + 1));
                    out(y, x) = edge ? 1 : 0;
                }
            }
            return out;
        }
        case SketchMethod::xdog: {
            const Plane<float> r = xdog_response(photo, options.xdog);
            BinaryMap out(photo.height, photo.width);
            for (std::size_t i = 0; i < out.size(); ++i) {
                out.values[i] = r.values[i] < 0.5f ? 1 : 0;
            }
            return out;
        }
        case SketchMethod::learned_edges: {
            if (!options.learned_edges) {
                throw ConfigError("sketch method 'learned_edges' requires a registered edge model");
            }
            BinaryMap out = options.learned_edges(photo);
            if (!out.same_extent(photo.height, photo.width)) {
                throw ShapeError("edge model returned a sketch of the wrong extent");
            }
            return out;
        }
    }
    throw ConfigError("unknown sketch method");
}

}  // namespace tgan::datagen
