/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tgan/image.hpp"

namespace tgan::detail {

/// Little-endian host assumed; used for shards and checkpoints.
class ByteWriter {
public:
    template <typename T>
    void pod(const T& v) {
        raw(&v, sizeof(T));
    }
    void str(const std::string& s) {
        pod(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    template <typename T>
    void plane(const Plane<T>& p) {
        raw(p.values.data(), p.values.size() * sizeof(T));
    }
    void raw(const void* data, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(data);
        buf_.insert(buf_.end(), b, b + n);
    }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    std::vector<std::uint8_t> buf_;
};

class TruncatedInput : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ByteReader {
public:
    ByteReader(std::span<const std::uint8_t> b, const char* what) : b_(b), what_(what) {}

    template <typename T>
    T pod() {
        T v;
        need(sizeof(T));
        std::memcpy(&v, b_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string str() {
        const auto n = pod<std::uint32_t>();
        need(n);
        std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    template <typename T>
    Plane<T> plane(int h, int w) {
        if (h < 0 || w < 0) {
            throw TruncatedInput(std::string(what_) + ": negative extent");
        }
        const std::size_t n = static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * sizeof(T);
        need(n);
        Plane<T> p(h, w);
        std::memcpy(p.values.data(), b_.data() + pos_, n);
        pos_ += n;
        return p;
    }
    void raw(void* out, std::size_t n) {
        need(n);
        std::memcpy(out, b_.data() + pos_, n);
        pos_ += n;
    }
    [[nodiscard]] bool matches(const char* magic, std::size_t n) const {
        return pos_ + n <= b_.size() && std::memcmp(b_.data() + pos_, magic, n) == 0;
    }
    void skip(std::size_t n) {
        need(n);
        pos_ += n;
    }
    [[nodiscard]] bool done() const { return pos_ == b_.size(); }
    [[nodiscard]] std::size_t remaining() const { return b_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (n > b_.size() - pos_) {
            throw TruncatedInput(std::string(what_) + " is truncated");
        }
    }

    std::span<const std::uint8_t> b_;
    const char* what_;
    std::size_t pos_ = 0;
};

}  // namespace tgan::detail
