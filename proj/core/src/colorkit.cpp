/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "tgan/colorkit.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace tgan::colorkit {

namespace {

// sRGB primaries, D65 white (IEC 61966-2-1).
const Eigen::Matrix3d& rgb_to_xyz() {
    static const Eigen::Matrix3d m = [] {
        Eigen::Matrix3d k;
        k << 0.4124564, 0.3575761, 0.1804375,  //
            0.2126729, 0.7151522, 0.0721750,   //
            0.0193339, 0.1191920, 0.9503041;
        return k;
    }();
    return m;
}

const Eigen::Matrix3d& xyz_to_rgb() {
    static const Eigen::Matrix3d m = rgb_to_xyz().inverse();
    return m;
}

// Reference white is the image of RGB (1,1,1) so white maps to a = b = 0.
const Eigen::Vector3d& white() {
    static const Eigen::Vector3d w = rgb_to_xyz() * Eigen::Vector3d::Ones();
    return w;
}

constexpr double kDelta = 6.0 / 29.0;

double lab_f(double t) {
    return t > kDelta * kDelta * kDelta ? std::cbrt(t) : t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
}

double lab_f_inv(double t) { return t > kDelta ? t * t * t : 3.0 * kDelta * kDelta * (t - 4.0 / 29.0); }

double srgb_decode(double c) { return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4); }

double srgb_encode(double c) {
    if (c <= 0.0031308) {
        return 12.92 * c;
    }
    return 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

}  // namespace

Lab srgb_to_lab(Rgb c) {
    const Eigen::Vector3d lin(srgb_decode(c.r), srgb_decode(c.g), srgb_decode(c.b));
    const Eigen::Vector3d xyz = rgb_to_xyz() * lin;
    const double fx = lab_f(xyz.x() / white().x());
    const double fy = lab_f(xyz.y() / white().y());
    const double fz = lab_f(xyz.z() / white().z());
    return {std::clamp(116.0 * fy - 16.0, 0.0, 100.0), 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

Rgb lab_to_srgb_unclamped(Lab c) {
    const double fy = (c.L + 16.0) / 116.0;
    const double fx = fy + c.a / 500.0;
    const double fz = fy - c.b / 200.0;
    const Eigen::Vector3d xyz(lab_f_inv(fx) * white().x(), lab_f_inv(fy) * white().y(), lab_f_inv(fz) * white().z());
    const Eigen::Vector3d lin = xyz_to_rgb() * xyz;
    auto enc = [](double v) { return v < 0.0 ? -srgb_encode(-v) : srgb_encode(v); };
    return {enc(lin.x()), enc(lin.y()), enc(lin.z())};
}

LabImage rgb_to_lab(const RgbImage& img) {
    img.validate();
    LabImage out(img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const Lab lab = srgb_to_lab({img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)});
            out.L(y, x) = static_cast<float>(lab.L);
            out.a(y, x) = static_cast<float>(std::clamp(lab.a, -128.0, 128.0));
            out.b(y, x) = static_cast<float>(std::clamp(lab.b, -128.0, 128.0));
        }
    }
    return out;
}

RgbConversion lab_to_rgb(const LabImage& img) {
    RgbConversion result{RgbImage(img.height(), img.width()), 0};
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            const Rgb c = lab_to_srgb_unclamped({img.L(y, x), img.a(y, x), img.b(y, x)});
            const double ch[3] = {c.r, c.g, c.b};
            for (int k = 0; k < 3; ++k) {
                double v = ch[k];
                if (!(v >= 0.0 && v <= 1.0)) {
                    // Rounding noise on in-gamut colors is not a clamp event.
                    if (!(v > -1e-6 && v < 1.0 + 1e-6)) {
                        ++result.clamped;
                    }
                    v = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
                }
                result.image.at(y, x, k) = static_cast<float>(v);
            }
        }
    }
    return result;
}

GrayTriple l_to_gray3(const Plane<float>& L) {
    Plane<float> scaled(L.height, L.width);
    for (std::size_t i = 0; i < L.size(); ++i) {
        scaled.values[i] = L.values[i] / 100.0f;
    }
    return {{scaled, scaled, scaled}};
}

ag::Var replicate_gray(const ag::Var& lightness) {
    const Shape s = lightness.shape();
    if (s.c != 1) {
        throw ShapeError("replicate_gray expects a single lightness channel, got " + s.str());
    }
    Tensor out(Shape{s.n, 3, s.h, s.w});
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < 3; ++c) {
            std::copy_n(lightness.value().plane(n, 0), s.plane(), out.plane(n, c));
        }
    }
    return ag::make_result(std::move(out), {lightness},
                           [s](const Tensor&, const Tensor& g, std::span<Tensor* const> pg) {
                               for (int n = 0; n < s.n; ++n) {
                                   const double* g0 = g.plane(n, 0);
                                   const double* g1 = g.plane(n, 1);
                                   const double* g2 = g.plane(n, 2);
                                   double* d = pg[0]->plane(n, 0);
                                   for (std::size_t i = 0; i < s.plane(); ++i) {
                                       d[i] += (g0[i] + g1[i] + g2[i]) / 3.0;
                                   }
                               }
                           });
}

}  // namespace tgan::colorkit
