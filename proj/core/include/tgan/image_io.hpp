/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "tgan/image.hpp"

namespace tgan::io {

class ImageDecodeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Decodes PNG or JPEG bytes (sniffed by signature). Alpha is composited over white.
RgbImage decode_image(std::span<const std::uint8_t> bytes);
RgbImage read_image(const std::filesystem::path& path);

/// 8-bit RGB PNG. Output bytes depend only on the pixel values.
std::vector<std::uint8_t> encode_png(const RgbImage& img);
void write_png(const std::filesystem::path& path, const RgbImage& img);

/// Single-channel helpers: 8-bit grayscale PNG of a {0,1} map (1 -> black stroke, 0 -> white).
std::vector<std::uint8_t> encode_sketch_png(const BinaryMap& sketch);
/// Pixels darker than mid-gray become strokes.
BinaryMap sketch_from_image(const RgbImage& img);
/// Nonzero (brighter than mid-gray) pixels become foreground.
BinaryMap mask_from_image(const RgbImage& img);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace tgan::io
