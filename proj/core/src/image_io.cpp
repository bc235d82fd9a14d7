/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "tgan/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <iterator>

#include <jpeglib.h>

namespace tgan::io {

namespace {

bool is_png(std::span<const std::uint8_t> b) {
    static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    return b.size() >= 8 && std::equal(sig, sig + 8, b.begin());
}

bool is_jpeg(std::span<const std::uint8_t> b) { return b.size() >= 3 && b[0] == 0xff && b[1] == 0xd8 && b[2] == 0xff; }

RgbImage from_bytes(const std::vector<std::uint8_t>& rgb, int h, int w) {
    RgbImage img(h, w);
    for (std::size_t i = 0; i < rgb.size(); ++i) {
        img.pixels[i] = static_cast<float>(rgb[i]) / 255.0f;
    }
    return img;
}

RgbImage decode_png(std::span<const std::uint8_t> bytes) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
        throw ImageDecodeError(std::string("png: ") + image.message);
    }
    image.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
    png_color white{255, 255, 255};
    if (!png_image_finish_read(&image, &white, buffer.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw ImageDecodeError("png: " + msg);
    }
    return from_bytes(buffer, static_cast<int>(image.height), static_cast<int>(image.width));
}

struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

RgbImage decode_jpeg(std::span<const std::uint8_t> bytes) {
    jpeg_decompress_struct cinfo{};
    JpegErrorManager err{};
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    std::vector<std::uint8_t> buffer;
    int h = 0;
    int w = 0;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw ImageDecodeError(std::string("jpeg: ") + err.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    h = static_cast<int>(cinfo.output_height);
    w = static_cast<int>(cinfo.output_width);
    buffer.resize(static_cast<std::size_t>(h) * w * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = buffer.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return from_bytes(buffer, h, w);
}

std::vector<std::uint8_t> encode_png_raw(const std::uint8_t* data, int h, int w, std::uint32_t format) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = format;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, data, 0, nullptr)) {
        throw ImageDecodeError(std::string("png encode: ") + image.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, data, 0, nullptr)) {
        throw ImageDecodeError(std::string("png encode: ") + image.message);
    }
    out.resize(size);
    return out;
}

}  // namespace

RgbImage decode_image(std::span<const std::uint8_t> bytes) {
    if (is_png(bytes)) {
        return decode_png(bytes);
    }
    if (is_jpeg(bytes)) {
        return decode_jpeg(bytes);
    }
    throw ImageDecodeError("unrecognized image format");
}

RgbImage read_image(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        return decode_image(bytes);
    } catch (const ImageDecodeError& e) {
        throw ImageDecodeError(path.string() + ": " + e.what());
    }
}

std::vector<std::uint8_t> encode_png(const RgbImage& img) {
    std::vector<std::uint8_t> rgb(img.pixels.size());
    for (std::size_t i = 0; i < rgb.size(); ++i) {
        const float v = std::isfinite(img.pixels[i]) ? std::clamp(img.pixels[i], 0.0f, 1.0f) : 0.0f;
        rgb[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    return encode_png_raw(rgb.data(), img.height, img.width, PNG_FORMAT_RGB);
}

void write_png(const std::filesystem::path& path, const RgbImage& img) { write_file(path, encode_png(img)); }

std::vector<std::uint8_t> encode_sketch_png(const BinaryMap& sketch) {
    std::vector<std::uint8_t> gray(sketch.size());
    for (std::size_t i = 0; i < gray.size(); ++i) {
        gray[i] = sketch.values[i] ? 0 : 255;
    }
    return encode_png_raw(gray.data(), sketch.height, sketch.width, PNG_FORMAT_GRAY);
}

BinaryMap sketch_from_image(const RgbImage& img) {
    BinaryMap out(img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const float lum = (img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2)) / 3.0f;
            out(y, x) = lum < 0.5f ? 1 : 0;
        }
    }
    return out;
}

BinaryMap mask_from_image(const RgbImage& img) {
    BinaryMap out = sketch_from_image(img);
    for (auto& v : out.values) {
        v = v ? 0 : 1;
    }
    return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw std::runtime_error("short write to " + path.string());
    }
}

}  // namespace tgan::io
