/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

// Minimal tape-free reverse-mode differentiation over NCHW tensors.
//
// Every op returns a Var whose node remembers its parents and a backward
// closure. Graphs are built only when at least one input requires a gradient
// and gradient recording is enabled; a Var that is dropped frees its graph.

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "tgan/tensor.hpp"

namespace tgan::ag {

/// Called once per node during backward. `parent_grads[i]` is null when
/// parent i does not require a gradient; otherwise contributions are added.
using BackwardFn =
    std::function<void(const Tensor& out_value, const Tensor& out_grad, std::span<Tensor* const> parent_grads)>;

namespace detail {
struct Node;
}

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    static Var constant(Tensor value) { return Var(std::move(value), false); }
    static Var parameter(Tensor value) { return Var(std::move(value), true); }

    [[nodiscard]] bool defined() const { return static_cast<bool>(node_); }
    [[nodiscard]] const Tensor& value() const;
    [[nodiscard]] const Shape& shape() const { return value().shape(); }
    [[nodiscard]] bool requires_grad() const;

    /// In-place access for optimizers and loaders; only legal on leaves.
    Tensor& mutable_value();
    void set_requires_grad(bool on);

    /// Accumulated gradient; an all-zero tensor when none was produced.
    [[nodiscard]] const Tensor& grad() const;
    [[nodiscard]] bool has_grad() const;
    void zero_grad();

    /// Seeds d(self)/d(self) = 1; self must hold a single element.
    void backward() const;
    void backward(const Tensor& seed) const;

    /// Same value, no history.
    [[nodiscard]] Var detach() const;

    [[nodiscard]] double item() const { return value().item(); }

    friend Var make_result(Tensor value, std::vector<Var> parents, BackwardFn fn);

private:
    std::shared_ptr<detail::Node> node_;
};

/// Builds an op output. Records history only when gradients are enabled and
/// some parent requires one.
Var make_result(Tensor value, std::vector<Var> parents, BackwardFn fn);

[[nodiscard]] bool grad_enabled();

/// Disables history recording for its lifetime (inference, target features).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// ---- elementwise ---------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var square(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var tanh(const Var& a);
Var sigmoid(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

/// x * scale[c] + shift[c] with constant per-channel coefficients.
Var channel_affine(const Var& x, std::span<const double> scale, std::span<const double> shift);

/// x (N,C,H,W) times a constant plane mask (N,1,H,W) broadcast over channels.
Var mul_plane_mask(const Var& x, const Tensor& mask);

// ---- reductions ----------------------------------------------------------

Var sum(const Var& a);
Var mean(const Var& a);
/// mean((a-b)^2) over all elements.
Var mse(const Var& a, const Var& b);
/// sum(mask*(a-b)^2) / (sum(mask) * C); mask is (N,1,H,W). Zero when the mask is empty.
Var masked_mse(const Var& a, const Var& b, const Tensor& mask);
/// (N,C,H,W) -> (N,C,1,1)
Var global_avg_pool(const Var& x);

// ---- structure -----------------------------------------------------------

Var concat_channels(const std::vector<Var>& parts);
Var slice_channels(const Var& x, int first, int count);
/// Spatial crop of every (n, c) plane.
Var crop(const Var& x, int top, int left, int height, int width);
/// Selects batch entries [first, first + count).
Var slice_batch(const Var& x, int first, int count);
Var concat_batch(const std::vector<Var>& parts);
Var upsample_nearest2x(const Var& x);
Var max_pool2x2(const Var& x);

// ---- layers --------------------------------------------------------------

struct ConvSpec {
    int stride = 1;
    int pad = 0;
    /// Edge-replicating padding instead of zeros.
    bool replicate = false;
};

/// weight: (Cout, Cin, K, K); bias: (1, Cout, 1, 1) or undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, ConvSpec spec);

/// Per-(n,c) normalization over H*W, then gamma/beta of shape (1,C,1,1)
/// (either may be undefined for a non-affine norm).
Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

/// Feature correlations F F^T per batch entry: (N,C,H,W) -> (N,1,C,C).
/// When `normalize` is set the result is divided by C*H*W.
Var gram(const Var& features, bool normalize);

/// Output extent of a convolution along one axis.
constexpr int conv_out_extent(int in, int kernel, int stride, int pad) {
    return (in + 2 * pad - kernel) / stride + 1;
}

}  // namespace tgan::ag
