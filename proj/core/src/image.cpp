/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "tgan/image.hpp"

#include <algorithm>
#include <cmath>

namespace tgan {

void RgbImage::validate() const {
    if (height <= 0 || width <= 0 || pixels.size() != static_cast<std::size_t>(height) * width * 3) {
        throw ValidationError("rgb image has invalid extent " + std::to_string(height) + "x" + std::to_string(width));
    }
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const float v = pixels[i];
        if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
            throw ValidationError("rgb value " + std::to_string(v) + " at index " + std::to_string(i) +
                                  " is not a finite value in [0,1]");
        }
    }
}

void LabImage::validate() const {
    if (!a.same_extent(L.height, L.width) || !b.same_extent(L.height, L.width)) {
        throw ValidationError("lab channels disagree in extent");
    }
    for (std::size_t i = 0; i < L.size(); ++i) {
        if (!(L.values[i] >= 0.0f && L.values[i] <= 100.0f) || !(std::abs(a.values[i]) <= 128.0f) ||
            !(std::abs(b.values[i]) <= 128.0f)) {
            throw ValidationError("lab value out of range at index " + std::to_string(i));
        }
    }
}

std::string Rect::str() const {
    return "(x=" + std::to_string(x) + ", y=" + std::to_string(y) + ", w=" + std::to_string(w) +
           ", h=" + std::to_string(h) + ")";
}

namespace {

struct Tap {
    int i0, i1;
    float t;
};

std::vector<Tap> taps(int in, int out) {
    std::vector<Tap> result(out);
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        const double src = std::clamp((o + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
        const int i0 = static_cast<int>(std::floor(src));
        const int i1 = std::min(i0 + 1, in - 1);
        result[o] = {i0, i1, static_cast<float>(src - i0)};
    }
    return result;
}

}  // namespace

RgbImage resize_bilinear(const RgbImage& img, int height, int width) {
    if (img.height == height && img.width == width) {
        return img;
    }
    RgbImage out(height, width);
    const auto ty = taps(img.height, height);
    const auto tx = taps(img.width, width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const float top = img.at(ty[y].i0, tx[x].i0, c) * (1 - tx[x].t) + img.at(ty[y].i0, tx[x].i1, c) * tx[x].t;
                const float bot = img.at(ty[y].i1, tx[x].i0, c) * (1 - tx[x].t) + img.at(ty[y].i1, tx[x].i1, c) * tx[x].t;
                out.at(y, x, c) = std::clamp(top * (1 - ty[y].t) + bot * ty[y].t, 0.0f, 1.0f);
            }
        }
    }
    return out;
}

Plane<float> resize_bilinear(const Plane<float>& img, int height, int width) {
    if (img.same_extent(height, width)) {
        return img;
    }
    Plane<float> out(height, width);
    const auto ty = taps(img.height, height);
    const auto tx = taps(img.width, width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const float top = img(ty[y].i0, tx[x].i0) * (1 - tx[x].t) + img(ty[y].i0, tx[x].i1) * tx[x].t;
            const float bot = img(ty[y].i1, tx[x].i0) * (1 - tx[x].t) + img(ty[y].i1, tx[x].i1) * tx[x].t;
            out(y, x) = top * (1 - ty[y].t) + bot * ty[y].t;
        }
    }
    return out;
}

BinaryMap resize_nearest(const BinaryMap& img, int height, int width) {
    if (img.same_extent(height, width)) {
        return img;
    }
    BinaryMap out(height, width);
    for (int y = 0; y < height; ++y) {
        const int sy = std::min(img.height - 1, static_cast<int>((y + 0.5) * img.height / height));
        for (int x = 0; x < width; ++x) {
            const int sx = std::min(img.width - 1, static_cast<int>((x + 0.5) * img.width / width));
            out(y, x) = img(sy, sx);
        }
    }
    return out;
}

RgbImage crop(const RgbImage& img, const Rect& r) {
    if (!r.inside(img.height, img.width)) {
        throw ValidationError("crop rectangle " + r.str() + " outside " + std::to_string(img.height) + "x" +
                              std::to_string(img.width) + " image");
    }
    RgbImage out(r.h, r.w);
    for (int y = 0; y < r.h; ++y) {
        std::copy_n(&img.pixels[(static_cast<std::size_t>(r.y + y) * img.width + r.x) * 3], r.w * 3,
                    &out.pixels[static_cast<std::size_t>(y) * r.w * 3]);
    }
    return out;
}

}  // namespace tgan
