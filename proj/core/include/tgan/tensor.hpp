/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tgan {

/// 64-byte aligned storage. Vectorized kernels split work by address, so a
/// fixed alignment keeps floating-point results identical from run to run.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept {
        return true;
    }
};

using AlignedBuffer = std::vector<double, AlignedAllocator<double>>;

/// Thrown when tensor or image extents disagree with what an operation needs.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// NCHW extent. Every tensor in the library is 4-D; scalars are 1x1x1x1.
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    [[nodiscard]] std::size_t size() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    [[nodiscard]] std::string str() const;

    friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense row-major NCHW array of doubles.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {}
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor(Shape{1, 1, 1, 1}, v); }

    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    [[nodiscard]] std::span<double> data() { return data_; }
    [[nodiscard]] std::span<const double> data() const { return data_; }
    [[nodiscard]] double* ptr() { return data_.data(); }
    [[nodiscard]] const double* ptr() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
    [[nodiscard]] double at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

    /// Pointer to the start of plane (n, c).
    double* plane(int n, int c) { return data_.data() + (static_cast<std::size_t>(n) * shape_.c + c) * shape_.plane(); }
    [[nodiscard]] const double* plane(int n, int c) const {
        return data_.data() + (static_cast<std::size_t>(n) * shape_.c + c) * shape_.plane();
    }

    [[nodiscard]] double item() const;
    void fill(double v);

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    [[nodiscard]] std::size_t index(int n, int c, int y, int x) const {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }

    Shape shape_{};
    AlignedBuffer data_;
};

}  // namespace tgan
