/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "tgan/colorkit.hpp"

using namespace tgan;

namespace {

// Textbook sRGB (IEC 61966-2-1, D65) -> XYZ -> CIE Lab, written out longhand.
colorkit::Lab reference_lab(double r, double g, double b) {
    auto lin = [](double c) { return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4); };
    const double R = lin(r), G = lin(g), B = lin(b);
    const double X = 0.4124 * R + 0.3576 * G + 0.1805 * B;
    const double Y = 0.2126 * R + 0.7152 * G + 0.0722 * B;
    const double Z = 0.0193 * R + 0.1192 * G + 0.9505 * B;
    const double Xn = 0.95047, Yn = 1.0, Zn = 1.08883;
    auto f = [](double t) {
        const double d = 6.0 / 29.0;
        return t > d * d * d ? std::cbrt(t) : t / (3 * d * d) + 4.0 / 29.0;
    };
    const double fx = f(X / Xn), fy = f(Y / Yn), fz = f(Z / Zn);
    return {116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)};
}

}  // namespace

TEST_CASE("colorkit: reference colors") {
    SUBCASE("mid gray matches the longhand formula") {
        const auto lab = colorkit::srgb_to_lab({0.5, 0.5, 0.5});
        const auto ref = reference_lab(0.5, 0.5, 0.5);
        CHECK(lab.L == doctest::Approx(ref.L).epsilon(1e-4));
        CHECK(std::abs(lab.a - ref.a) < 2e-2);
        CHECK(std::abs(lab.b - ref.b) < 2e-2);
        // Frozen from the longhand oracle above.
        CHECK(lab.L == doctest::Approx(53.3890).epsilon(1e-5));
        CHECK(std::abs(lab.a) < 1e-6);
        CHECK(std::abs(lab.b) < 1e-6);
    }
    SUBCASE("primaries match the longhand formula") {
        for (auto c : {colorkit::Rgb{1, 0, 0}, colorkit::Rgb{0, 1, 0}, colorkit::Rgb{0, 0, 1},
                       colorkit::Rgb{0.2, 0.7, 0.4}}) {
            const auto lab = colorkit::srgb_to_lab(c);
            const auto ref = reference_lab(c.r, c.g, c.b);
            CHECK(lab.L == doctest::Approx(ref.L).epsilon(1e-3));
            CHECK(std::abs(lab.a - ref.a) < 0.1);
            CHECK(std::abs(lab.b - ref.b) < 0.1);
        }
    }
    SUBCASE("white and black") {
        const auto w = colorkit::lab_to_srgb_unclamped({100, 0, 0});
        CHECK(std::abs(w.r - 1) < 1e-3);
        CHECK(std::abs(w.g - 1) < 1e-3);
        CHECK(std::abs(w.b - 1) < 1e-3);
        const auto k = colorkit::lab_to_srgb_unclamped({0, 0, 0});
        CHECK(std::abs(k.r) < 1e-9);
        CHECK(std::abs(k.g) < 1e-9);
        CHECK(std::abs(k.b) < 1e-9);
    }
}

TEST_CASE("colorkit: roundtrip property over random colors") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < 2000; ++i) {
        const colorkit::Rgb c{u(rng), u(rng), u(rng)};
        const auto lab = colorkit::srgb_to_lab(c);
        CHECK(lab.L >= -1e-9);
        CHECK(lab.L <= 100 + 1e-9);
        const auto back = colorkit::lab_to_srgb_unclamped(lab);
        REQUIRE(std::abs(back.r - c.r) < 0.5 / 255);
        REQUIRE(std::abs(back.g - c.g) < 0.5 / 255);
        REQUIRE(std::abs(back.b - c.b) < 0.5 / 255);
    }
}

TEST_CASE("colorkit: image conversion validates and counts clamps") {
    const RgbImage img = testing::random_image(8, 9, 3);
    const LabImage lab = colorkit::rgb_to_lab(img);
    CHECK(lab.height() == 8);
    CHECK(lab.width() == 9);
    CHECK_NOTHROW(lab.validate());

    RgbImage bad = img;
    bad.at(0, 0, 0) = 1.5f;
    CHECK_THROWS_AS(colorkit::rgb_to_lab(bad), ValidationError);
    bad.at(0, 0, 0) = std::nanf("");
    CHECK_THROWS_AS(colorkit::rgb_to_lab(bad), ValidationError);

    LabImage out_of_gamut(1, 2);
    out_of_gamut.L(0, 0) = 50;
    out_of_gamut.a(0, 0) = 127;
    out_of_gamut.b(0, 0) = -127;
    out_of_gamut.L(0, 1) = 50;
    const auto conv = colorkit::lab_to_rgb(out_of_gamut);
    CHECK(conv.clamped > 0);
    for (float v : conv.image.pixels) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    LabImage gray(1, 1);
    gray.L(0, 0) = 50;
    CHECK(colorkit::lab_to_rgb(gray).clamped == 0);
}

TEST_CASE("colorkit: gray triple") {
    Plane<float> L(3, 4, 50.0f);
    const auto g = colorkit::l_to_gray3(L);
    for (const auto& ch : g.channels) {
        for (float v : ch.values) {
            CHECK(v == doctest::Approx(0.5));
        }
    }
}

TEST_CASE("colorkit: replication backward averages channel gradients") {
    const Tensor x0 = testing::random_tensor({2, 1, 3, 3}, 5);
    SUBCASE("loss on channel 0 only gives 1/3") {
        const ag::Var x = ag::Var::parameter(x0);
        ag::sum(ag::slice_channels(colorkit::replicate_gray(x), 0, 1)).backward();
        for (double g : x.grad().data()) {
            CHECK(g == doctest::Approx(1.0 / 3.0));
        }
    }
    SUBCASE("loss on all channels gives 1") {
        const ag::Var x = ag::Var::parameter(x0);
        ag::sum(colorkit::replicate_gray(x)).backward();
        for (double g : x.grad().data()) {
            CHECK(g == doctest::Approx(1.0));
        }
    }
    SUBCASE("arbitrary downstream loss: analytic equals finite difference / 3") {
        const Tensor w = testing::random_tensor({2, 3, 3, 3}, 6, -1, 1);
        auto loss = [&](const ag::Var& v) {
            const ag::Var r = colorkit::replicate_gray(v);
            return ag::sum(ag::square(ag::mul(r, ag::Var::constant(w))));
        };
        const ag::Var x = ag::Var::parameter(x0);
        loss(x).backward();
        Tensor probe = x0;
        for (std::size_t i = 0; i < x0.size(); ++i) {
            const double keep = probe[i];
            probe[i] = keep + 1e-6;
            const double up = loss(ag::Var::constant(probe)).item();
            probe[i] = keep - 1e-6;
            const double down = loss(ag::Var::constant(probe)).item();
            probe[i] = keep;
            CHECK(x.grad()[i] == doctest::Approx((up - down) / 2e-6 / 3.0).epsilon(1e-6));
        }
    }
    SUBCASE("shape check") {
        CHECK_THROWS_AS(colorkit::replicate_gray(ag::Var::constant(Tensor({1, 2, 2, 2}))), ShapeError);
    }
}
