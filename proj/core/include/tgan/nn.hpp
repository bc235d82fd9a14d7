/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tgan/autograd.hpp"

namespace tgan::nn {

struct NamedParam {
    std::string name;
    ag::Var var;
};

using ParamList = std::vector<NamedParam>;

/// Conv layer with He-normal weights drawn from the caller's generator.
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in_channels, int out_channels, int kernel, ag::ConvSpec spec, std::mt19937_64& rng, bool bias = true);

    ag::Var operator()(const ag::Var& x) const { return ag::conv2d(x, weight_, bias_, spec_); }
    void collect(const std::string& prefix, ParamList& out) const;

    [[nodiscard]] int in_channels() const { return weight_.shape().c; }
    [[nodiscard]] int out_channels() const { return weight_.shape().n; }
    [[nodiscard]] int kernel() const { return weight_.shape().h; }
    [[nodiscard]] ag::ConvSpec spec() const { return spec_; }
    [[nodiscard]] const ag::Var& weight() const { return weight_; }
    [[nodiscard]] const ag::Var& bias() const { return bias_; }

private:
    ag::Var weight_;
    ag::Var bias_;
    ag::ConvSpec spec_{};
};

class InstanceNorm {
public:
    InstanceNorm() = default;
    explicit InstanceNorm(int channels);

    ag::Var operator()(const ag::Var& x) const { return ag::instance_norm(x, gamma_, beta_); }
    void collect(const std::string& prefix, ParamList& out) const;

private:
    ag::Var gamma_;
    ag::Var beta_;
};

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adaptive-moment optimizer over a fixed, ordered parameter list.
class Adam {
public:
    struct Slot {
        Tensor m;
        Tensor v;
    };

    Adam() = default;
    Adam(ParamList params, AdamConfig cfg);

    void zero_grad();
    void step();

    [[nodiscard]] const AdamConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }
    [[nodiscard]] std::int64_t steps() const { return steps_; }
    [[nodiscard]] const ParamList& params() const { return params_; }
    [[nodiscard]] const std::vector<Slot>& slots() const { return slots_; }

    /// Restores moments; shapes must match the parameter list.
    void restore(std::int64_t steps, std::vector<Slot> slots);

private:
    ParamList params_;
    AdamConfig cfg_{};
    std::vector<Slot> slots_;
    std::int64_t steps_ = 0;
};

/// Order-sensitive FNV-1a digest of the raw parameter bytes.
std::uint64_t parameter_digest(const ParamList& params);

}  // namespace tgan::nn
