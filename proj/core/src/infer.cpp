/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "tgan/infer.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>

#include "tgan/checkpoint.hpp"
#include "tgan/codec.hpp"
#include "tgan/image_io.hpp"
#include "tgan/train.hpp"

namespace tgan::infer {

namespace {

int hex_digit(char c) {
    if (c >= '0' && c <= '9') {
        return c - '0';
    }
    if (c >= 'a' && c <= 'f') {
        return c - 'a' + 10;
    }
    if (c >= 'A' && c <= 'F') {
        return c - 'A' + 10;
    }
    return -1;
}

void check_rect(const Rect& r, int side, const char* what, std::size_t index) {
    if (!r.inside(side, side)) {
        throw ValidationError(std::string(what) + " patch " + std::to_string(index) + " rectangle " + r.str() +
                              " is outside the " + std::to_string(side) + "x" + std::to_string(side) + " canvas");
    }
}

/// Source pixel for canvas position (y, x) inside `r`: top-left anchored, tiled.
template <typename Fn>
void paste(const Rect& r, int src_h, int src_w, Fn&& fn) {
    for (int y = r.y; y < r.y + r.h; ++y) {
        const int sy = (y - r.y) % src_h;
        for (int x = r.x; x < r.x + r.w; ++x) {
            fn(y, x, sy, (x - r.x) % src_w);
        }
    }
}

void check_image(const RgbImage& img, const char* what, std::size_t index) {
    if (img.height <= 0 || img.width <= 0) {
        throw ValidationError(std::string(what) + " patch " + std::to_string(index) + " image is empty");
    }
}

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace

void SynthesisRequest::validate() const {
    if (resolution < kMinResolution || resolution > kMaxResolution) {
        throw UnsupportedResolution("resolution " + std::to_string(resolution) + " is outside [" +
                                    std::to_string(kMinResolution) + ", " + std::to_string(kMaxResolution) + "]");
    }
    if (sketch.height <= 0 || sketch.width <= 0) {
        throw ValidationError("sketch is empty");
    }
    for (std::uint8_t v : sketch.values) {
        if (v > 1) {
            throw ValidationError("sketch must be binary");
        }
    }
    for (std::size_t i = 0; i < textures.size(); ++i) {
        check_rect(textures[i].rect, resolution, "texture", i);
        check_image(textures[i].image, "texture", i);
        textures[i].image.validate();
    }
    for (std::size_t i = 0; i < colors.size(); ++i) {
        check_rect(colors[i].rect, resolution, "color", i);
        if (const auto* img = std::get_if<RgbImage>(&colors[i].source)) {
            check_image(*img, "color", i);
            img->validate();
        } else {
            const auto& c = std::get<colorkit::Rgb>(colors[i].source);
            for (double v : {c.r, c.g, c.b}) {
                if (!(v >= 0.0 && v <= 1.0)) {
                    throw ValidationError("color patch " + std::to_string(i) + " has a channel outside [0,1]");
                }
            }
        }
    }
}

colorkit::Rgb parse_hex_color(std::string_view text) {
    std::string_view s = text;
    if (!s.empty() && s.front() == '#') {
        s.remove_prefix(1);
    }
    if (s.size() != 6) {
        throw ValidationError("color '" + std::string(text) + "' is not of the form #rrggbb");
    }
    std::array<double, 3> ch{};
    for (int c = 0; c < 3; ++c) {
        const int hi = hex_digit(s[2 * c]);
        const int lo = hex_digit(s[2 * c + 1]);
        if (hi < 0 || lo < 0) {
            throw ValidationError("color '" + std::string(text) + "' is not of the form #rrggbb");
        }
        ch[c] = (hi * 16 + lo) / 255.0;
    }
    return {ch[0], ch[1], ch[2]};
}

std::string to_hex(const colorkit::Rgb& c) {
    auto byte = [](double v) { return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", byte(c.r), byte(c.g), byte(c.b));
    return buf;
}

datagen::InputStack build_input(const SynthesisRequest& req) {
    req.validate();
    const int side = req.resolution;
    auto in = datagen::InputStack::blank(side, side);
    in.sketch = req.sketch.same_extent(side, side) ? req.sketch : resize_nearest(req.sketch, side, side);

    for (const auto& t : req.textures) {
        const LabImage lab = colorkit::rgb_to_lab(t.image);
        paste(t.rect, lab.height(), lab.width(), [&](int y, int x, int sy, int sx) {
            in.tex_intensity(y, x) = std::clamp(lab.L(sy, sx) / 100.0f, 0.0f, 1.0f);
            in.tex_mask(y, x) = 1;
        });
    }
    for (const auto& c : req.colors) {
        if (const auto* img = std::get_if<RgbImage>(&c.source)) {
            const LabImage lab = colorkit::rgb_to_lab(*img);
            paste(c.rect, lab.height(), lab.width(), [&](int y, int x, int sy, int sx) {
                in.color_a(y, x) = std::clamp(lab.a(sy, sx) / 128.0f, -1.0f, 1.0f);
                in.color_b(y, x) = std::clamp(lab.b(sy, sx) / 128.0f, -1.0f, 1.0f);
            });
        } else {
            const colorkit::Lab lab = colorkit::srgb_to_lab(std::get<colorkit::Rgb>(c.source));
            const auto a = static_cast<float>(std::clamp(lab.a / 128.0, -1.0, 1.0));
            const auto b = static_cast<float>(std::clamp(lab.b / 128.0, -1.0, 1.0));
            paste(c.rect, 1, 1, [&](int y, int x, int, int) {
                in.color_a(y, x) = a;
                in.color_b(y, x) = b;
            });
        }
    }
    in.validate();
    return in;
}

datagen::InputStack resize_input(const datagen::InputStack& in, int side) {
    if (in.height() == side && in.width() == side) {
        return in;
    }
    datagen::InputStack out = datagen::InputStack::blank(side, side);
    const int h = in.height();
    const int w = in.width();
    for (int y = 0; y < side; ++y) {
        const int sy = std::min(h - 1, static_cast<int>((y + 0.5) * h / side));
        for (int x = 0; x < side; ++x) {
            const int sx = std::min(w - 1, static_cast<int>((x + 0.5) * w / side));
            out.sketch(y, x) = in.sketch(sy, sx);
            out.tex_intensity(y, x) = in.tex_intensity(sy, sx);
            out.tex_mask(y, x) = in.tex_mask(sy, sx);
            out.color_a(y, x) = in.color_a(sy, sx);
            out.color_b(y, x) = in.color_b(sy, sx);
        }
    }
    return out;
}

// ---- generator backend ---------------------------------------------------

Synthesizer::Synthesizer(std::unique_ptr<nets::Generator> generator, int native_resolution, std::string model_id)
    : g_(std::move(generator)), native_(native_resolution), id_(std::move(model_id)) {
    if (!g_) {
        throw ConfigError("synthesizer needs a generator");
    }
    const int step = 1 << g_->config().n_down;
    if (native_ <= 0 || native_ % step != 0) {
        throw ConfigError("native resolution " + std::to_string(native_) + " is not a multiple of " +
                          std::to_string(step));
    }
}

std::unique_ptr<Synthesizer> Synthesizer::from_file(const std::filesystem::path& checkpoint) {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = io::read_file(checkpoint);
    } catch (const std::exception& e) {
        throw CheckpointError("cannot read checkpoint " + checkpoint.string() + ": " + e.what());
    }
    return from_bytes(bytes);
}

std::unique_ptr<Synthesizer> Synthesizer::from_bytes(std::span<const std::uint8_t> checkpoint) {
    const Checkpoint ckpt = Checkpoint::decode(checkpoint);
    train::TrainConfig cfg;
    auto g = train::load_generator(ckpt, &cfg);
    return std::make_unique<Synthesizer>(std::move(g), cfg.resolution, codec::sha256_hex(checkpoint));
}

LabImage Synthesizer::run(const datagen::InputStack& input) const {
    if (input.height() != native_ || input.width() != native_) {
        throw ValidationError("generator input must be " + std::to_string(native_) + "x" + std::to_string(native_));
    }
    ag::NoGradGuard no_grad;
    const datagen::InputStack* one = &input;
    const Tensor out = g_->forward(ag::Var::constant(datagen::input_tensor({one, 1}))).value();
    return datagen::lab_from_tensor(out, 0);
}

SynthesisResult Synthesizer::synthesize(const SynthesisRequest& req) const {
    const auto t0 = Clock::now();
    const datagen::InputStack input = build_input(req);
    SynthesisResult result;
    result.internal_resolution = native_;
    LabImage lab = run(resize_input(input, native_));
    auto rgb = colorkit::lab_to_rgb(lab);
    if (req.resolution != native_) {
        rgb.image = resize_bilinear(rgb.image, req.resolution, req.resolution);
        lab = colorkit::rgb_to_lab(rgb.image);
    }
    result.image = std::move(rgb.image);
    result.lab = std::move(lab);
    result.clamped = rgb.clamped;
    result.latency_ms = ms_since(t0);
    return result;
}

// ---- stub backend --------------------------------------------------------

StubBackend::StubBackend(int native_resolution) : native_(native_resolution) {
    if (native_ < kMinResolution || native_ > kMaxResolution) {
        throw ConfigError("stub resolution " + std::to_string(native_) + " is unsupported");
    }
}

std::string StubBackend::model_id() const {
    const std::string tag = "stub:" + std::to_string(native_);
    return codec::sha256_hex({reinterpret_cast<const std::uint8_t*>(tag.data()), tag.size()});
}

SynthesisResult StubBackend::synthesize(const SynthesisRequest& req) const {
    const auto t0 = Clock::now();
    req.validate();
    const int side = req.resolution;
    RgbImage img(side, side, 1.0f);
    for (const auto& t : req.textures) {
        paste(t.rect, t.image.height, t.image.width, [&](int y, int x, int sy, int sx) {
            for (int c = 0; c < 3; ++c) {
                img.at(y, x, c) = t.image.at(sy, sx, c);
            }
        });
    }
    for (const auto& cp : req.colors) {
        if (const auto* src = std::get_if<RgbImage>(&cp.source)) {
            paste(cp.rect, src->height, src->width, [&](int y, int x, int sy, int sx) {
                for (int c = 0; c < 3; ++c) {
                    img.at(y, x, c) = src->at(sy, sx, c);
                }
            });
        } else {
            const auto& rgb = std::get<colorkit::Rgb>(cp.source);
            const std::array<float, 3> v = {static_cast<float>(rgb.r), static_cast<float>(rgb.g),
                                            static_cast<float>(rgb.b)};
            paste(cp.rect, 1, 1, [&](int y, int x, int, int) {
                for (int c = 0; c < 3; ++c) {
                    img.at(y, x, c) = v[c];
                }
            });
        }
    }
    const BinaryMap sketch = req.sketch.same_extent(side, side) ? req.sketch : resize_nearest(req.sketch, side, side);
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            if (sketch(y, x)) {
                for (int c = 0; c < 3; ++c) {
                    img.at(y, x, c) = 0.0f;
                }
            }
        }
    }
    SynthesisResult result;
    result.lab = colorkit::rgb_to_lab(img);
    result.image = std::move(img);
    result.internal_resolution = side;
    result.latency_ms = ms_since(t0);
    return result;
}

}  // namespace tgan::infer
