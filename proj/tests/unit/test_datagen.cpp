/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "tgan/archive.hpp"
#include "tgan/codec.hpp"
#include "tgan/colorkit.hpp"
#include "tgan/datagen.hpp"
#include "tgan/image_io.hpp"
#include "tgan/synthetic.hpp"

using namespace tgan;
using namespace tgan::datagen;

namespace {

RgbImage square_photo(int side, int x0, int y0, int w, float value = 0.0f) {
    RgbImage img(side, side, 1.0f);
    for (int y = y0; y < y0 + w; ++y) {
        for (int x = x0; x < x0 + w; ++x) {
            for (int c = 0; c < 3; ++c) {
                img.at(y, x, c) = value;
            }
        }
    }
    return img;
}

SegmentationMask rect_mask(int h, int w, Rect r) {
    SegmentationMask m{BinaryMap(h, w)};
    for (int y = r.y; y < r.y + r.h; ++y) {
        for (int x = r.x; x < r.x + r.w; ++x) {
            m.mask(y, x) = 1;
        }
    }
    return m;
}

/// Independent xDoG: full 2D Gaussian kernels (not separable passes), edge clamped.
std::size_t reference_xdog_strokes(const RgbImage& img, const XdogParams& p) {
    const int h = img.height, w = img.width;
    auto lum = [&](int y, int x) {
        y = std::clamp(y, 0, h - 1);
        x = std::clamp(x, 0, w - 1);
        return 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
    };
    auto blur = [&](int y, int x, double sigma) {
        const int r = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
        double acc = 0, norm = 0;
        for (int dy = -r; dy <= r; ++dy) {
            for (int dx = -r; dx <= r; ++dx) {
                const double k = std::exp(-0.5 * (dx * dx + dy * dy) / (sigma * sigma));
                acc += k * lum(y + dy, x + dx);
                norm += k;
            }
        }
        return acc / norm;
    };
    std::size_t strokes = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double d = blur(y, x, p.sigma) - p.tau * blur(y, x, p.sigma * p.k);
            const double t = d >= p.epsilon ? 1.0 : 1.0 + std::tanh(p.phi * (d - p.epsilon));
            strokes += t < 0.5 ? 1 : 0;
        }
    }
    return strokes;
}

}  // namespace

TEST_CASE("foreground mask") {
    SUBCASE("all white is rejected with the image name") {
        try {
            compute_foreground_mask(RgbImage(8, 8, 1.0f), MaskMode::white_background, {.image_name = "blank.png"});
            FAIL("expected rejection");
        } catch (const MaskRejected& e) {
            CHECK(std::string(e.what()).find("blank.png") != std::string::npos);
        }
    }
    SUBCASE("black square on white gives exactly that square") {
        const auto m = compute_foreground_mask(square_photo(16, 4, 5, 6), MaskMode::white_background);
        CHECK(m.mask == rect_mask(16, 16, {4, 5, 6, 6}).mask);
        CHECK(m.coverage() == doctest::Approx(36.0 / 256.0));
    }
    SUBCASE("coverage equals a direct min-channel count") {
        const RgbImage photo = synthetic::product_photo(3, 64);
        const auto m = compute_foreground_mask(photo, MaskMode::white_background);
        std::size_t count = 0;
        for (int y = 0; y < 64; ++y) {
            for (int x = 0; x < 64; ++x) {
                const float lo = std::min({photo.at(y, x, 0), photo.at(y, x, 1), photo.at(y, x, 2)});
                count += lo <= 0.95f ? 1 : 0;
            }
        }
        CHECK(m.foreground() == count);
    }
    SUBCASE("provided mode") {
        BinaryMap provided(8, 8);
        provided(2, 3) = 1;
        const auto m = compute_foreground_mask(RgbImage(8, 8, 1.0f), MaskMode::provided, {.provided = &provided});
        CHECK(m.foreground() == 1);
        CHECK_THROWS_AS(compute_foreground_mask(RgbImage(8, 8, 1.0f), MaskMode::provided), ConfigError);
    }
    SUBCASE("sketch fill fills the closed outline") {
        BinaryMap sketch(12, 12);
        for (int i = 2; i <= 8; ++i) {
            sketch(2, i) = sketch(8, i) = sketch(i, 2) = sketch(i, 8) = 1;
        }
        const auto m = compute_foreground_mask(RgbImage(12, 12, 1.0f), MaskMode::sketch_fill, {.sketch = &sketch});
        CHECK(m.foreground() == 49);
        CHECK(m.mask(5, 5) == 1);
        CHECK(m.mask(0, 0) == 0);
    }
    SUBCASE("enum strings") {
        CHECK(parse_mask_mode("provided") == MaskMode::provided);
        CHECK(to_string(MaskMode::sketch_fill) == "sketch_fill");
        CHECK_THROWS_AS(parse_mask_mode("magic"), ConfigError);
    }
}

TEST_CASE("sketches") {
    SUBCASE("mask_canny traces the 1-px perimeter of a square") {
        const RgbImage photo = square_photo(16, 4, 4, 8);
        const auto mask = rect_mask(16, 16, {4, 4, 8, 8});
        const BinaryMap s = generate_sketch(photo, mask, SketchMethod::mask_canny);
        std::size_t strokes = 0;
        for (int y = 0; y < 16; ++y) {
            for (int x = 0; x < 16; ++x) {
                const bool perimeter = mask.mask(y, x) && (y == 4 || y == 11 || x == 4 || x == 11);
                CHECK(s(y, x) == (perimeter ? 1 : 0));
                strokes += s(y, x);
            }
        }
        CHECK(strokes == 28);
    }
    SUBCASE("blank mask gives blank sketch") {
        const BinaryMap s = generate_sketch(RgbImage(8, 8, 1.0f), SegmentationMask{BinaryMap(8, 8)},
                                            SketchMethod::mask_canny);
        CHECK(std::count(s.values.begin(), s.values.end(), 1) == 0);
    }
    SUBCASE("xdog matches an independent reimplementation") {
        // Soft ramp on the left, hard step on the right.
        RgbImage img(24, 32);
        for (int y = 0; y < 24; ++y) {
            for (int x = 0; x < 32; ++x) {
                const float v = x < 16 ? 0.3f + x / 40.0f : (x < 24 ? 0.9f : 0.15f);
                for (int c = 0; c < 3; ++c) {
                    img.at(y, x, c) = v;
                }
            }
        }
        for (const XdogParams& p : {XdogParams{}, XdogParams{1.2, 1.6, 0.95, -0.02, 50.0}}) {
            const BinaryMap s = generate_sketch(img, SegmentationMask{BinaryMap(24, 32)}, SketchMethod::xdog,
                                                {.xdog = p});
            const auto count = static_cast<std::size_t>(std::count(s.values.begin(), s.values.end(), 1));
            CHECK(count == reference_xdog_strokes(img, p));
            CHECK(count > 0);
        }
    }
    SUBCASE("learned edges need a registered model") {
        const auto mask = rect_mask(8, 8, {1, 1, 4, 4});
        CHECK_THROWS_AS(generate_sketch(RgbImage(8, 8, 1.0f), mask, SketchMethod::learned_edges), ConfigError);
        SketchOptions opts;
        opts.learned_edges = [](const RgbImage& img) { return BinaryMap(img.height, img.width, 1); };
        const BinaryMap s = generate_sketch(RgbImage(8, 8, 1.0f), mask, SketchMethod::learned_edges, opts);
        CHECK(std::count(s.values.begin(), s.values.end(), 1) == 64);
    }
    SUBCASE("unknown method string") {
        CHECK_THROWS_AS(parse_sketch_method("pencil"), ConfigError);
    }
}

TEST_CASE("patch placement") {
    PlacementConfig cfg = placement_defaults(128);
    CHECK(cfg.min_size == 24);
    CHECK(cfg.max_size == 64);
    CHECK(placement_defaults(256).min_size == 48);
    CHECK(placement_defaults(256).max_size == 128);

    SUBCASE("full foreground gives overlap 1") {
        const auto m = rect_mask(128, 128, {0, 0, 128, 128});
        for (std::uint64_t s = 0; s < 50; ++s) {
            const auto p = sample_patch_placement(m, s, cfg);
            CHECK(p.overlap == 1.0);
            CHECK(p.rect.w >= cfg.min_size);
            CHECK(p.rect.w <= cfg.max_size);
        }
    }
    SUBCASE("left-half mask, 1000 draws, exhaustive overlap check") {
        const auto m = rect_mask(128, 128, {0, 0, 64, 128});
        for (std::uint64_t s = 0; s < 1000; ++s) {
            const auto p = sample_patch_placement(m, s, cfg);
            REQUIRE(p.rect.inside(128, 128));
            int inside = 0;
            for (int y = p.rect.y; y < p.rect.y + p.rect.h; ++y) {
                for (int x = p.rect.x; x < p.rect.x + p.rect.w; ++x) {
                    inside += x < 64 ? 1 : 0;
                }
            }
            REQUIRE(inside >= 0.70 * p.rect.w * p.rect.h);
            CHECK(p.overlap == doctest::Approx(static_cast<double>(inside) / (p.rect.w * p.rect.h)));
            CHECK(sample_patch_placement(m, s, cfg).rect == p.rect);
        }
    }
    SUBCASE("one-pixel mask with min size 10 is unsatisfiable") {
        const auto m = rect_mask(64, 64, {30, 30, 1, 1});
        PlacementConfig c;
        c.min_size = 10;
        c.max_size = 20;
        CHECK_THROWS_AS(sample_patch_placement(m, 1, c), SamplingError);
    }
}

TEST_CASE("training examples") {
    ExampleConfig cfg;
    cfg.resolution = 64;
    cfg.placement = placement_defaults(64);

    SUBCASE("uniform gray object: constant intensity inside the placement, zero outside") {
        const RgbImage photo = square_photo(64, 8, 8, 48, 0.4f);
        const auto ex = make_training_example(photo, 3, cfg, "gray");
        const float expected = static_cast<float>(colorkit::srgb_to_lab({0.4, 0.4, 0.4}).L / 100.0);
        REQUIRE(ex.texture_placements.size() == 1);
        const Rect r = ex.texture_placements[0].rect;
        for (int y = 0; y < 64; ++y) {
            for (int x = 0; x < 64; ++x) {
                if (r.contains(y, x)) {
                    CHECK(ex.input.tex_intensity(y, x) == doctest::Approx(expected).epsilon(1e-4));
                    CHECK(ex.input.tex_mask(y, x) == 1);
                } else {
                    CHECK(ex.input.tex_intensity(y, x) == 0.0f);
                    CHECK(ex.input.tex_mask(y, x) == 0);
                }
            }
        }
    }
    SUBCASE("rejection names the source image") {
        try {
            make_training_example(RgbImage(64, 64, 1.0f), 1, cfg, std::string(40, 'q') + ".png");
            FAIL("expected rejection");
        } catch (const MaskRejected& e) {
            CHECK(std::string(e.what()).find(std::string(40, 'q') + ".png") != std::string::npos);
        }
    }
    SUBCASE("background of the target is white") {
        const auto ex = make_training_example(synthetic::product_photo(5, 64), 5, cfg, "p");
        for (std::size_t i = 0; i < ex.mask.mask.size(); ++i) {
            if (!ex.mask.mask.values[i]) {
                CHECK(ex.target.L.values[i] == 100.0f);
                CHECK(ex.target.a.values[i] == 0.0f);
            }
        }
    }
    SUBCASE("invariant sweep over 1000 seeded examples") {
        const RgbImage photos[] = {synthetic::product_photo(1, 64), synthetic::product_photo(2, 64),
                                   synthetic::product_photo(3, 64)};
        ExampleConfig two = cfg;
        two.max_patches = 2;
        for (std::uint64_t s = 0; s < 1000; ++s) {
            const auto ex = make_training_example(photos[s % 3], s, s % 2 ? two : cfg, "p");
            REQUIRE_NOTHROW(ex.input.validate());
            REQUIRE(ex.input.height() == ex.target.height());
            for (const auto& p : ex.texture_placements) {
                REQUIRE(p.overlap >= 0.70);
            }
            REQUIRE(ex.color_placement.has_value());
            // Color channels hold ground-truth ab exactly inside the color placement.
            const Rect c = ex.color_placement->rect;
            for (int y = 0; y < 64; ++y) {
                for (int x = 0; x < 64; ++x) {
                    const bool in = c.contains(y, x);
                    REQUIRE((ex.input.color_a(y, x) == kColorSentinel) == !in);
                }
            }
        }
    }
    SUBCASE("two-patch union equals the recorded placements") {
        ExampleConfig two = cfg;
        two.max_patches = 2;
        two.two_patch_probability = 1.0;
        const auto ex = make_training_example(synthetic::product_photo(8, 64), 12, two, "p");
        REQUIRE(ex.texture_placements.size() == 2);
        for (int y = 0; y < 64; ++y) {
            for (int x = 0; x < 64; ++x) {
                const bool in = ex.texture_placements[0].rect.contains(y, x) ||
                                ex.texture_placements[1].rect.contains(y, x);
                CHECK(ex.input.tex_mask(y, x) == (in ? 1 : 0));
            }
        }
    }
    SUBCASE("regions: patches come from distinct labels") {
        const RgbImage photo = square_photo(64, 4, 4, 56, 0.3f);
        Plane<std::uint16_t> regions(64, 64);
        for (int y = 0; y < 64; ++y) {
            for (int x = 0; x < 64; ++x) {
                regions(y, x) = x < 32 ? 1 : 2;
            }
        }
        ExampleConfig two = cfg;
        two.max_patches = 2;
        two.two_patch_probability = 1.0;
        const auto ex = make_training_example(photo, 4, two, "r", {.regions = &regions});
        REQUIRE(ex.texture_placements.size() == 2);
        auto side = [&](const Rect& r) {
            int left = 0;
            for (int y = r.y; y < r.y + r.h; ++y) {
                for (int x = r.x; x < r.x + r.w; ++x) {
                    left += x < 32 ? 1 : 0;
                }
            }
            return 2 * left > r.w * r.h ? 1 : 2;
        };
        CHECK(side(ex.texture_placements[0].rect) != side(ex.texture_placements[1].rect));
    }
    SUBCASE("deterministic in the seed") {
        const RgbImage photo = synthetic::product_photo(9, 64);
        const auto a = make_training_example(photo, 21, cfg, "p");
        const auto b = make_training_example(photo, 21, cfg, "p");
        CHECK(a.input == b.input);
        CHECK(a.target == b.target);
    }
}

TEST_CASE("texture ingestion") {
    testing::TempDir dir("textures");
    for (int i = 0; i < 3; ++i) {
        io::write_png(dir / ("t" + std::to_string(2 - i) + ".png"), testing::random_image(80, 90, i));
    }
    io::write_file(dir / "zz-broken.png", std::vector<std::uint8_t>{1, 2, 3});
    TextureIngestConfig cfg{64, 2, 7};
    const auto a = ingest_texture_dir(dir.path(), cfg);
    const auto b = ingest_texture_dir(dir.path(), cfg);
    REQUIRE(a.size() == 6);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].source_id == b[i].source_id);
        CHECK(a[i].texture == b[i].texture);
        CHECK(a[i].texture.height() >= 64);
        CHECK(a[i].texture.width() >= 64);
    }
    CHECK(a[0].source_id < a[5].source_id);

    testing::TempDir empty("empty");
    CHECK_THROWS_AS(ingest_texture_dir(empty.path(), cfg), ConfigError);
    CHECK_THROWS_AS(ingest_texture_dir(empty / "missing", cfg), ConfigError);

    // Smaller than the network input: resized up.
    const auto small = texture_crops(testing::random_image(20, 30, 1), "s", cfg);
    REQUIRE(small.size() == 2);
    CHECK(small[0].texture.height() >= 64);
}

TEST_CASE("network tensors") {
    const auto in = InputStack::blank(4, 5);
    const Tensor t = input_tensor({&in, 1});
    CHECK(t.shape() == Shape{1, 5, 4, 5});
    CHECK(t.at(0, 3, 0, 0) == kColorSentinel);
    LabImage lab(2, 2);
    lab.L(0, 0) = 50;
    lab.a(0, 1) = 64;
    lab.b(1, 0) = -128;
    const Tensor lt = lab_tensor({&lab, 1});
    CHECK(lt.at(0, 0, 0, 0) == doctest::Approx(0.5));
    CHECK(lt.at(0, 1, 0, 1) == doctest::Approx(0.5));
    CHECK(lt.at(0, 2, 1, 0) == doctest::Approx(-1.0));
    CHECK(lab_from_tensor(lt, 0) == lab);
}

TEST_CASE("input stack validation") {
    auto in = InputStack::blank(4, 4);
    CHECK_NOTHROW(in.validate());
    in.tex_intensity(1, 1) = 0.5f;
    CHECK_THROWS_AS(in.validate(), ValidationError);
    in.tex_mask(1, 1) = 1;
    CHECK_NOTHROW(in.validate());
    in.color_a(0, 0) = 0.1f;
    CHECK_THROWS_AS(in.validate(), ValidationError);
    in.color_b(0, 0) = 0.1f;
    CHECK_NOTHROW(in.validate());
}

TEST_CASE("shards and datasets") {
    testing::TempDir root("collection");
    synthetic::write_sample_collection(root.path(), 5, 2, 64, 3);
    io::write_png(root / "photos/blank.png", RgbImage(64, 64, 1.0f));
    testing::TempDir out("dataset");
    DatagenJob job;
    job.root = root.path();
    job.out = out.path();
    job.resolution = 64;
    job.texture_crops = 2;
    job.shard_size = 2;
    const auto summary = run_datagen(job);
    CHECK(summary.examples == 5);
    CHECK(summary.rejected == 1);
    CHECK(summary.textures == 4);
    CHECK(summary.shards.size() >= 3);

    const Dataset ds = load_dataset(out.path());
    CHECK(ds.resolution == 64);
    REQUIRE(ds.examples.size() == 5);
    CHECK(ds.textures.size() == 4);

    // Shard codec roundtrip is exact.
    const auto bytes = encode_example_shard(ds.examples);
    const auto back = decode_example_shard(bytes);
    REQUIRE(back.size() == ds.examples.size());
    CHECK(back[0].input == ds.examples[0].input);
    CHECK(back[0].target == ds.examples[0].target);
    CHECK(encode_example_shard(back) == bytes);
    auto cut = bytes;
    cut.resize(cut.size() - 10);
    CHECK_THROWS(decode_example_shard(cut));

    // Tampering with a shard is caught by its checksum.
    const auto shard = out / summary.shards.front().file;
    auto raw = io::read_file(shard);
    raw[raw.size() / 2] ^= 0xFF;
    io::write_file(shard, raw);
    CHECK_THROWS(load_dataset(out.path()));
}
