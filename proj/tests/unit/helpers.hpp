/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "tgan/image.hpp"
#include "tgan/tensor.hpp"

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag);
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

tgan::Tensor random_tensor(tgan::Shape s, std::uint64_t seed, double lo = 0.0, double hi = 1.0);
tgan::RgbImage random_image(int h, int w, std::uint64_t seed);

}  // namespace testing
