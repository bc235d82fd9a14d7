/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tgan {

/// Raised when an image value or extent breaks a documented invariant.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Single-channel H x W raster, row-major.
template <typename T>
struct Plane {
    int height = 0;
    int width = 0;
    std::vector<T> values;

    Plane() = default;
    Plane(int h, int w, T fill = T{}) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

    T& operator()(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
    const T& operator()(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }

    [[nodiscard]] std::size_t size() const { return values.size(); }
    [[nodiscard]] bool same_extent(int h, int w) const { return height == h && width == w; }

    friend bool operator==(const Plane&, const Plane&) = default;
};

/// {0,1} raster: sketches, masks, location indicators.
using BinaryMap = Plane<std::uint8_t>;

/// sRGB image, interleaved HWC, values in [0,1].
struct RgbImage {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;

    RgbImage() = default;
    RgbImage(int h, int w, float fill = 0.0f) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

    float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    [[nodiscard]] float at(int y, int x, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }

    /// Throws ValidationError unless every value is finite and inside [0,1].
    void validate() const;

    friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// CIE Lab image stored as planes: L in [0,100], a and b in [-128,128].
struct LabImage {
    Plane<float> L;
    Plane<float> a;
    Plane<float> b;

    LabImage() = default;
    LabImage(int h, int w) : L(h, w), a(h, w), b(h, w) {}

    [[nodiscard]] int height() const { return L.height; }
    [[nodiscard]] int width() const { return L.width; }

    void validate() const;

    friend bool operator==(const LabImage&, const LabImage&) = default;
};

/// Axis-aligned pixel rectangle.
struct Rect {
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;

    [[nodiscard]] bool inside(int height, int width) const {
        return x >= 0 && y >= 0 && w > 0 && h > 0 && x + w <= width && y + h <= height;
    }
    [[nodiscard]] bool contains(int py, int px) const { return px >= x && px < x + w && py >= y && py < y + h; }
    [[nodiscard]] bool intersects(const Rect& o) const {
        return x < o.x + o.w && o.x < x + w && y < o.y + o.h && o.y < y + h;
    }
    [[nodiscard]] std::string str() const;

    friend bool operator==(const Rect&, const Rect&) = default;
};

// Resampling helpers (bilinear with edge clamp, sample centers aligned).
RgbImage resize_bilinear(const RgbImage& img, int height, int width);
Plane<float> resize_bilinear(const Plane<float>& img, int height, int width);
BinaryMap resize_nearest(const BinaryMap& img, int height, int width);
RgbImage crop(const RgbImage& img, const Rect& r);

}  // namespace tgan
