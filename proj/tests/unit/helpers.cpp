/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "helpers.hpp"

#include <atomic>
#include <unistd.h>

namespace testing {

TempDir::TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("tgan-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

tgan::Tensor random_tensor(tgan::Shape s, std::uint64_t seed, double lo, double hi) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    tgan::Tensor t(s);
    for (double& v : t.data()) {
        v = u(rng);
    }
    return t;
}

tgan::RgbImage random_image(int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    tgan::RgbImage img(h, w);
    for (float& v : img.pixels) {
        v = u(rng);
    }
    return img;
}

}  // namespace testing
