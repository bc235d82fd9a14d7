/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "tgan/nn.hpp"

#include <cmath>
#include <cstring>

namespace tgan::nn {

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, ag::ConvSpec spec, std::mt19937_64& rng, bool bias)
    : spec_(spec) {
    Tensor w(Shape{out_channels, in_channels, kernel, kernel});
    const double fan_in = static_cast<double>(in_channels) * kernel * kernel;
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (double& v : w.data()) {
        v = dist(rng);
    }
    weight_ = ag::Var::parameter(std::move(w));
    if (bias) {
        bias_ = ag::Var::parameter(Tensor(Shape{1, out_channels, 1, 1}));
    }
}

void Conv2d::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".weight", weight_});
    if (bias_.defined()) {
        out.push_back({prefix + ".bias", bias_});
    }
}

InstanceNorm::InstanceNorm(int channels)
    : gamma_(ag::Var::parameter(Tensor(Shape{1, channels, 1, 1}, 1.0))),
      beta_(ag::Var::parameter(Tensor(Shape{1, channels, 1, 1}))) {}

void InstanceNorm::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".gamma", gamma_});
    out.push_back({prefix + ".beta", beta_});
}

Adam::Adam(ParamList params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    slots_.reserve(params_.size());
    for (const auto& p : params_) {
        slots_.push_back({Tensor(p.var.shape()), Tensor(p.var.shape())});
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) {
        p.var.zero_grad();
    }
}

void Adam::step() {
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double c1 = 1.0 - std::pow(cfg_.beta1, t);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& var = params_[k].var;
        if (!var.requires_grad() || !var.has_grad()) {
            continue;
        }
        const Tensor& g = var.grad();
        Tensor& value = var.mutable_value();
        Slot& s = slots_[k];
        for (std::size_t i = 0; i < g.size(); ++i) {
            s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g[i];
            s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = s.m[i] / c1;
            const double vhat = s.v[i] / c2;
            value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void Adam::restore(std::int64_t steps, std::vector<Slot> slots) {
    if (slots.size() != params_.size()) {
        throw ShapeError("optimizer state has " + std::to_string(slots.size()) + " slots, expected " +
                         std::to_string(params_.size()));
    }
    for (std::size_t k = 0; k < slots.size(); ++k) {
        if (slots[k].m.shape() != params_[k].var.shape() || slots[k].v.shape() != params_[k].var.shape()) {
            throw ShapeError("optimizer slot shape mismatch for " + params_[k].name);
        }
    }
    steps_ = steps;
    slots_ = std::move(slots);
}

std::uint64_t parameter_digest(const ParamList& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* data, std::size_t len) {
        const auto* b = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& p : params) {
        mix(p.name.data(), p.name.size());
        const auto d = p.var.value().data();
        mix(d.data(), d.size_bytes());
    }
    return h;
}

}  // namespace tgan::nn
