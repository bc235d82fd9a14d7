/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "tgan/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace tgan::ag {

namespace detail {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    BackwardFn backward;

    Tensor& ensure_grad() {
        if (grad.shape() != value.shape()) {
            grad = Tensor(value.shape());
        }
        return grad;
    }
};

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

void require_same(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    }
}

template <typename F>
Var unary(const Var& a, F&& f, BackwardFn fn) {
    Tensor out(a.shape());
    const auto in = a.value().data();
    auto o = out.data();
    for (std::size_t i = 0; i < in.size(); ++i) {
        o[i] = f(in[i]);
    }
    return make_result(std::move(out), {a}, std::move(fn));
}

}  // namespace

// ---- Var -----------------------------------------------------------------

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

const Tensor& Var::value() const {
    if (!node_) {
        throw std::logic_error("value() on undefined Var");
    }
    return node_->value;
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Var::mutable_value() {
    if (!node_->parents.empty()) {
        throw std::logic_error("mutable_value() on a non-leaf Var");
    }
    return node_->value;
}

void Var::set_requires_grad(bool on) { node_->requires_grad = on; }

const Tensor& Var::grad() const { return node_->ensure_grad(); }

bool Var::has_grad() const { return node_ && node_->grad.shape() == node_->value.shape(); }

void Var::zero_grad() {
    if (has_grad()) {
        node_->grad.fill(0.0);
    }
}

void Var::backward() const {
    if (value().size() != 1) {
        throw ShapeError("backward() without seed needs a scalar, got " + shape().str());
    }
    backward(Tensor(shape(), 1.0));
}

void Var::backward(const Tensor& seed) const {
    if (seed.shape() != shape()) {
        throw ShapeError("backward seed shape " + seed.shape().str() + " vs " + shape().str());
    }
    if (!requires_grad()) {
        return;
    }
    // Iterative post-order DFS gives a topological order.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    Tensor& root_grad = node_->ensure_grad();
    for (std::size_t i = 0; i < seed.size(); ++i) {
        root_grad[i] += seed[i];
    }
    std::vector<Tensor*> parent_grads;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (!node->backward) {
            continue;
        }
        parent_grads.clear();
        for (auto& p : node->parents) {
            parent_grads.push_back(p->requires_grad ? &p->ensure_grad() : nullptr);
        }
        node->backward(node->value, node->ensure_grad(), parent_grads);
    }
}

Var Var::detach() const { return Var(value(), false); }

Var make_result(Tensor value, std::vector<Var> parents, BackwardFn fn) {
    Var out(std::move(value), false);
    if (!g_grad_enabled) {
        return out;
    }
    const bool any = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p.requires_grad(); });
    if (!any) {
        return out;
    }
    out.node_->requires_grad = true;
    out.node_->backward = std::move(fn);
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) {
        out.node_->parents.push_back(p.node_);
    }
    return out;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---- elementwise ---------------------------------------------------------

Var add(const Var& a, const Var& b) {
    require_same(a, b, "add");
    Tensor out(a.shape());
    const auto x = a.value().data();
    const auto y = b.value().data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] = x[i] + y[i];
    }
    return make_result(std::move(out), {a, b}, [](const Tensor&, const Tensor& g, std::span<Tensor* const> pg) {
        for (Tensor* t : pg) {
            if (t) {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    (*t)[i] += g[i];
                }
            }
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same(a, b, "sub");
    Tensor out(a.shape());
    const auto x = a.value().data();
    const auto y = b.value().data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] = x[i] - y[i];
    }
    return make_result(std::move(out), {a, b}, [](const Tensor&, const Tensor& g, std::span<Tensor* const> pg) {
        if (pg[0]) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                (*pg[0])[i] += g[i];
            }
        }
        if (pg[1]) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                (*pg[1])[i] -= g[i];
            }
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same(a, b, "mul");
    Tensor out(a.shape());
    const auto x = a.value().data();
    const auto y = b.value().data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] = x[i] * y[i];
    }
    return make_result(std::move(out), {a, b}, [a, b](const Tensor&, const Tensor& g, std::span<Tensor* const> pg) {
        const auto& av = a.value();
        const auto& bv = b.value();
        if (pg[0]) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                (*pg[0])[i] += g[i] * bv[i];
            }
        }
        if (pg[1]) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                (*pg[1])[i] += g[i] * av[i];
            }
        }
    });
}

Var scale(const Var& a, double s) {
    return unary(a, [s](double v) { return v * s; },
                 [s](const Tensor&, const Tensor& g, std::span<Tensor* const> pg) {
                     for (std::size_t i = 0; i < g.size(); ++i) {
                         (*pg[0])[i] += g[i] * s;
                     }
                 });
}

Var add_scalar(const Var& a, double s) {
    return unary(a, [s](double v) { return v + s; },
                 [](const Tensor&, const Tensor& g, std::span<Tensor* const> pg) {
                     for (std::size_t i = 0; i < g.size(); ++i) {
                         (*pg[0])[i] += g[i];
                     }
                 });
}

Var square(const Var& a) {
    return unary(a, [](double v) { return v * v; },
                 [a](const Tensor&, const Tensor& g, std::span<Tensor* const> pg) {
                     const auto& x = a.value();
                     for (std::size_t i = 0; i < g.size(); ++i) {
                         (*pg[0])[i] += 2.0 * x[i] * g[i];
                     }
                 });
}

Var relu(const Var& a) {
    return unary(a, [](double v) { return v > 0.0 ? v : 0.0; },
                 [](const Tensor& y, const Tensor& g, std::span<Tensor* const> pg) {
                     for (std::size_t i = 0; i < g.size(); ++i) {
                         if (y[i] > 0.0) {
                             (*pg[0])[i] += g[i];
                         }
                     }
                 });
}

Var leaky_relu(const Var& a, double slope) {
    return unary(a, [slope](double v) { return v > 0.0 ? v : slope * v; },
                 [a, slope](const Tensor&, const Tensor& g, std::span<Tensor* const> pg) {
                     const auto& x = a.value();
                     for (std::size_t i = 0; i < g.size(); ++i) {
                         (*pg[0])[i] += x[i] > 0.0 ? g[i] : slope * g[i];
                     }
                 });
}

Var tanh(const Var& a) {
    return unary(a, [](double v) { return std::tanh(v); },
                 [](const Tensor& y, const Tensor& g, std::span<Tensor* const> pg) {
                     for (std::size_t i = 0; i < g.size(); ++i) {
                         (*pg[0])[i] += g[i] * (1.0 - y[i] * y[i]);
                     }
                 });
}

Var sigmoid(const Var& a) {
    return unary(a, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
                 [](const Tensor& y, const Tensor& g, std::span<Tensor* const> pg) {
                     for (std::size_t i = 0; i < g.size(); ++i) {
                         (*pg[0])[i] += g[i] * y[i] * (1.0 - y[i]);
                     }
                 });
}

Var channel_affine(const Var& x, std::span<const double> scale, std::span<const double> shift) {
    const Shape s = x.shape();
    if (scale.size() != static_cast<std::size_t>(s.c) || shift.size() != static_cast<std::size_t>(s.c)) {
        throw ShapeError("channel_affine: coefficient count does not match channels of " + s.str());
    }
    std::vector<double> sc(scale.begin(), scale.end());
    Tensor out(s);
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const double* in = x.value().plane(n, c);
            double* o = out.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) {
                o[i] = in[i] * scale[c] + shift[c];
            }
        }
    }
    return make_result(std::move(out), {x}, [sc, s](const Tensor&, const Tensor& g, std::span<Tensor* const> pg) {
        for (int n = 0; n < s.n; ++n) {
            for (int c = 0; c < s.c; ++c) {
                const double* gi = g.plane(n, c);
                double* d = pg[0]->plane(n, c);
                for (std::size_t i = 0; i < s.plane(); ++i) {
                    d[i] += gi[i] * sc[c];
                }
            }
        }
    });
}

Var mul_plane_mask(const Var& x, const Tensor& mask) {
    const Shape s = x.shape();
    if (mask.shape() != Shape{s.n, 1, s.h, s.w}) {
        throw ShapeError("mul_plane_mask: mask " + mask.shape().str() + " vs input " + s.str());
    }
    Tensor out(s);
    for (int n = 0; n < s.n; ++n) {
        const double* m = mask.plane(n, 0);
        for (int c = 0; c < s.c; ++c) {
            const double* in = x.value().plane(n, c);
            double* o = out.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) {
                o[i] = in[i] * m[i];
            }
        }
    }
    return make_result(std::move(out), {x}, [mask, s](const Tensor&, const Tensor& g, std::span<Tensor* const> pg) {
        for (int n = 0; n < s.n; ++n) {
            const double* m = mask.plane(n, 0);
            for (int c = 0; c < s.c; ++c) {
                const double* gi = g.plane(n, c);
                double* d = pg[0]->plane(n, c);
                for (std::size_t i = 0; i < s.plane(); ++i) {
                    d[i] += gi[i] * m[i];
                }
            }
        }
    });
}

// ---- reductions ----------------------------------------------------------

Var sum(const Var& a) {
    double total = 0.0;
    for (double v : a.value().data()) {
        total += v;
    }
    return make_result(Tensor::scalar(total), {a}, [](const Tensor&, const Tensor& g, std::span<Tensor* const> pg) {
        const double gv = g[0];
        for (double& d : pg[0]->data()) {
            d += gv;
        }
    });
}

Var mean(const Var& a) {
    const double n = static_cast<double>(a.value().size());
    return scale(sum(a), 1.0 / n);
}

Var mse(const Var& a, const Var& b) {
    require_same(a, b, "mse");
    const auto x = a.value().data();
    const auto y = b.value().data();
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        total += d * d;
    }
    const double inv = 1.0 / static_cast<double>(x.size());
    return make_result(Tensor::scalar(total * inv), {a, b},
                       [a, b, inv](const Tensor&, const Tensor& g, std::span<Tensor* const> pg) {
                           const auto x = a.value().data();
                           const auto y = b.value().data();
                           const double k = 2.0 * inv * g[0];
                           for (std::size_t i = 0; i < x.size(); ++i) {
                               const double d = k * (x[i] - y[i]);
                               if (pg[0]) {
                                   (*pg[0])[i] += d;
                               }
                               if (pg[1]) {
                                   (*pg[1])[i] -= d;
                               }
                           }
                       });
}

Var masked_mse(const Var& a, const Var& b, const Tensor& mask) {
    require_same(a, b, "masked_mse");
    const Shape s = a.shape();
    if (mask.shape() != Shape{s.n, 1, s.h, s.w}) {
        throw ShapeError("masked_mse: mask " + mask.shape().str() + " vs input " + s.str());
    }
    double weight = 0.0;
    for (double m : mask.data()) {
        weight += m;
    }
    weight *= s.c;
    if (weight <= 0.0) {
        return make_result(Tensor::scalar(0.0), {a, b}, [](const Tensor&, const Tensor&, std::span<Tensor* const>) {});
    }
    double total = 0.0;
    for (int n = 0; n < s.n; ++n) {
        const double* m = mask.plane(n, 0);
        for (int c = 0; c < s.c; ++c) {
            const double* x = a.value().plane(n, c);
            const double* y = b.value().plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) {
                const double d = x[i] - y[i];
                total += m[i] * d * d;
            }
        }
    }
    const double inv = 1.0 / weight;
    return make_result(Tensor::scalar(total * inv), {a, b},
                       [a, b, mask, s, inv](const Tensor&, const Tensor& g, std::span<Tensor* const> pg) {
                           const double k = 2.0 * inv * g[0];
                           for (int n = 0; n < s.n; ++n) {
                               const double* m = mask.plane(n, 0);
                               for (int c = 0; c < s.c; ++c) {
                                   const double* x = a.value().plane(n, c);
                                   const double* y = b.value().plane(n, c);
                                   double* ga = pg[0] ? pg[0]->plane(n, c) : nullptr;
                                   double* gb = pg[1] ? pg[1]->plane(n, c) : nullptr;
                                   for (std::size_t i = 0; i < s.plane(); ++i) {
                                       const double d = k * m[i] * (x[i] - y[i]);
                                       if (ga) {
                                           ga[i] += d;
                                       }
                                       if (gb) {
                                           gb[i] -= d;
                                       }
                                   }
                               }
                           }
                       });
}

Var global_avg_pool(const Var& x) {
    const Shape s = x.shape();
    Tensor out(Shape{s.n, s.c, 1, 1});
    const double inv = 1.0 / static_cast<double>(s.plane());
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const double* p = x.value().plane(n, c);
            double acc = 0.0;
            for (std::size_t i = 0; i < s.plane(); ++i) {
                acc += p[i];
            }
            out.at(n, c, 0, 0) = acc * inv;
        }
    }
    return make_result(std::move(out), {x}, [s, inv](const Tensor&, const Tensor& g, std::span<Tensor* const> pg) {
        for (int n = 0; n < s.n; ++n) {
            for (int c = 0; c < s.c; ++c) {
                const double gv = g.at(n, c, 0, 0) * inv;
                double* d = pg[0]->plane(n, c);
                for (std::size_t i = 0; i < s.plane(); ++i) {
                    d[i] += gv;
                }
            }
        }
    });
}

// ---- structure -----------------------------------------------------------

Var concat_channels(const std::vector<Var>& parts) {
    if (parts.empty()) {
        throw ShapeError("concat_channels: no inputs");
    }
    Shape s = parts.front().shape();
    s.c = 0;
    for (const auto& p : parts) {
        const Shape& ps = p.shape();
        if (ps.n != s.n || ps.h != s.h || ps.w != s.w) {
            throw ShapeError("concat_channels: incompatible " + ps.str() + " vs " + parts.front().shape().str());
        }
        s.c += ps.c;
    }
    Tensor out(s);
    std::vector<int> offsets;
    int off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const Shape& ps = p.shape();
        for (int n = 0; n < s.n; ++n) {
            std::copy_n(p.value().plane(n, 0), ps.c * s.plane(), out.plane(n, off));
        }
        off += ps.c;
    }
    std::vector<int> counts;
    for (const auto& p : parts) {
        counts.push_back(p.shape().c);
    }
    return make_result(std::move(out), parts,
                       [offsets, counts, s](const Tensor&, const Tensor& g, std::span<Tensor* const> pg) {
                           for (std::size_t k = 0; k < pg.size(); ++k) {
                               if (!pg[k]) {
                                   continue;
                               }
                               for (int n = 0; n < s.n; ++n) {
                                   const double* src = g.plane(n, offsets[k]);
                                   double* dst = pg[k]->plane(n, 0);
                                   const std::size_t len = counts[k] * s.plane();
                                   for (std::size_t i = 0; i < len; ++i) {
                                       dst[i] += src[i];
                                   }
                               }
                           }
                       });
}

Var slice_channels(const Var& x, int first, int count) {
    const Shape s = x.shape();
    if (first < 0 || count <= 0 || first + count > s.c) {
        throw ShapeError("slice_channels: [" + std::to_string(first) + "," + std::to_string(first + count) +
                         ") out of range for " + s.str());
    }
    Tensor out(Shape{s.n, count, s.h, s.w});
    for (int n = 0; n < s.n; ++n) {
        std::copy_n(x.value().plane(n, first), count * s.plane(), out.plane(n, 0));
    }
    return make_result(std::move(out), {x},
                       [first, count, s](const Tensor&, const Tensor& g, std::span<Tensor* const> pg) {
                           for (int n = 0; n < s.n; ++n) {
                               const double* src = g.plane(n, 0);
                               double* dst = pg[0]->plane(n, first);
                               for (std::size_t i = 0; i < count * s.plane(); ++i) {
                                   dst[i] += src[i];
                               }
                           }
                       });
}

Var crop(const Var& x, int top, int left, int height, int width) {
    const Shape s = x.shape();
    if (top < 0 || left < 0 || height <= 0 || width <= 0 || top + height > s.h || left + width > s.w) {
        throw ShapeError("crop: rectangle out of bounds for " + s.str());
    }
    Tensor out(Shape{s.n, s.c, height, width});
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < height; ++y) {
                std::copy_n(x.value().plane(n, c) + (top + y) * s.w + left, width, out.plane(n, c) + y * width);
            }
        }
    }
    return make_result(std::move(out), {x},
                       [s, top, left, height, width](const Tensor&, const Tensor& g, std::span<Tensor* const> pg) {
                           for (int n = 0; n < s.n; ++n) {
                               for (int c = 0; c < s.c; ++c) {
                                   for (int y = 0; y < height; ++y) {
                                       const double* src = g.plane(n, c) + y * width;
                                       double* dst = pg[0]->plane(n, c) + (top + y) * s.w + left;
                                       for (int i = 0; i < width; ++i) {
                                           dst[i] += src[i];
                                       }
                                   }
                               }
                           }
                       });
}

Var slice_batch(const Var& x, int first, int count) {
    const Shape s = x.shape();
    if (first < 0 || count <= 0 || first + count > s.n) {
        throw ShapeError("slice_batch: out of range for " + s.str());
    }
    Tensor out(Shape{count, s.c, s.h, s.w});
    const std::size_t per = static_cast<std::size_t>(s.c) * s.plane();
    std::copy_n(x.value().ptr() + first * per, count * per, out.ptr());
    return make_result(std::move(out), {x}, [first, per](const Tensor&, const Tensor& g, std::span<Tensor* const> pg) {
        double* dst = pg[0]->ptr() + first * per;
        for (std::size_t i = 0; i < g.size(); ++i) {
            dst[i] += g[i];
        }
    });
}

Var concat_batch(const std::vector<Var>& parts) {
    if (parts.empty()) {
        throw ShapeError("concat_batch: no inputs");
    }
    Shape s = parts.front().shape();
    s.n = 0;
    for (const auto& p : parts) {
        const Shape& ps = p.shape();
        if (ps.c != s.c || ps.h != s.h || ps.w != s.w) {
            throw ShapeError("concat_batch: incompatible " + ps.str());
        }
        s.n += ps.n;
    }
    Tensor out(s);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        std::copy_n(p.value().ptr(), p.value().size(), out.ptr() + off);
        off += p.value().size();
    }
    return make_result(std::move(out), parts, [offsets](const Tensor&, const Tensor& g, std::span<Tensor* const> pg) {
        for (std::size_t k = 0; k < pg.size(); ++k) {
            if (!pg[k]) {
                continue;
            }
            const double* src = g.ptr() + offsets[k];
            for (std::size_t i = 0; i < pg[k]->size(); ++i) {
                (*pg[k])[i] += src[i];
            }
        }
    });
}

Var upsample_nearest2x(const Var& x) {
    const Shape s = x.shape();
    const Shape os{s.n, s.c, s.h * 2, s.w * 2};
    Tensor out(os);
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const double* in = x.value().plane(n, c);
            double* o = out.plane(n, c);
            for (int y = 0; y < os.h; ++y) {
                for (int xx = 0; xx < os.w; ++xx) {
                    o[y * os.w + xx] = in[(y / 2) * s.w + xx / 2];
                }
            }
        }
    }
    return make_result(std::move(out), {x}, [s, os](const Tensor&, const Tensor& g, std::span<Tensor* const> pg) {
        for (int n = 0; n < s.n; ++n) {
            for (int c = 0; c < s.c; ++c) {
                const double* gi = g.plane(n, c);
                double* d = pg[0]->plane(n, c);
                for (int y = 0; y < os.h; ++y) {
                    for (int xx = 0; xx < os.w; ++xx) {
                        d[(y / 2) * s.w + xx / 2] += gi[y * os.w + xx];
                    }
                }
            }
        }
    });
}

Var max_pool2x2(const Var& x) {
    const Shape s = x.shape();
    const Shape os{s.n, s.c, s.h / 2, s.w / 2};
    Tensor out(os);
    std::vector<std::uint32_t> argmax(os.size());
    std::size_t k = 0;
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const double* in = x.value().plane(n, c);
            double* o = out.plane(n, c);
            for (int y = 0; y < os.h; ++y) {
                for (int xx = 0; xx < os.w; ++xx, ++k) {
                    std::uint32_t best = static_cast<std::uint32_t>((2 * y) * s.w + 2 * xx);
                    for (int dy = 0; dy < 2; ++dy) {
                        for (int dx = 0; dx < 2; ++dx) {
                            const auto idx = static_cast<std::uint32_t>((2 * y + dy) * s.w + 2 * xx + dx);
                            if (in[idx] > in[best]) {
                                best = idx;
                            }
                        }
                    }
                    argmax[k] = best;
                    o[y * os.w + xx] = in[best];
                }
            }
        }
    }
    return make_result(std::move(out), {x},
                       [s, os, argmax = std::move(argmax)](const Tensor&, const Tensor& g, std::span<Tensor* const> pg) {
                           std::size_t k = 0;
                           for (int n = 0; n < s.n; ++n) {
                               for (int c = 0; c < s.c; ++c) {
                                   const double* gi = g.plane(n, c);
                                   double* d = pg[0]->plane(n, c);
                                   for (std::size_t i = 0; i < os.plane(); ++i, ++k) {
                                       d[argmax[k]] += gi[i];
                                   }
                               }
                           }
                       });
}

// ---- layers --------------------------------------------------------------

namespace {

struct ConvGeometry {
    int cin, h, w, k, stride, pad, ho, wo;
    bool replicate;
    [[nodiscard]] int rows() const { return cin * k * k; }
    [[nodiscard]] int cols() const { return ho * wo; }
};

void im2col(const double* img, const ConvGeometry& g, double* col) {
    for (int c = 0; c < g.cin; ++c) {
        for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
                double* row = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * g.cols();
                for (int oy = 0; oy < g.ho; ++oy) {
                    int iy = oy * g.stride - g.pad + ky;
                    double* dst = row + oy * g.wo;
                    if (g.replicate) {
                        iy = std::clamp(iy, 0, g.h - 1);
                    } else if (iy < 0 || iy >= g.h) {
                        std::fill_n(dst, g.wo, 0.0);
                        continue;
                    }
                    const double* src = img + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
                    for (int ox = 0; ox < g.wo; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (g.replicate) {
                            dst[ox] = src[std::clamp(ix, 0, g.w - 1)];
                        } else {
                            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
                        }
                    }
                }
            }
        }
    }
}

void col2im(const double* col, const ConvGeometry& g, double* img) {
    for (int c = 0; c < g.cin; ++c) {
        for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
                const double* row = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * g.cols();
                for (int oy = 0; oy < g.ho; ++oy) {
                    int iy = oy * g.stride - g.pad + ky;
                    if (g.replicate) {
                        iy = std::clamp(iy, 0, g.h - 1);
                    } else if (iy < 0 || iy >= g.h) {
                        continue;
                    }
                    const double* src = row + oy * g.wo;
                    double* dst = img + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
                    for (int ox = 0; ox < g.wo; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (g.replicate) {
                            dst[std::clamp(ix, 0, g.w - 1)] += src[ox];
                        } else if (ix >= 0 && ix < g.w) {
                            dst[ix] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, ConvSpec spec) {
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    if (ws.c != xs.c || ws.h != ws.w) {
        throw ShapeError("conv2d: weight " + ws.str() + " incompatible with input " + xs.str());
    }
    if (bias.defined() && bias.shape() != Shape{1, ws.n, 1, 1}) {
        throw ShapeError("conv2d: bias " + bias.shape().str() + " for " + std::to_string(ws.n) + " outputs");
    }
    const ConvGeometry g{xs.c,
                         xs.h,
                         xs.w,
                         ws.h,
                         spec.stride,
                         spec.pad,
                         conv_out_extent(xs.h, ws.h, spec.stride, spec.pad),
                         conv_out_extent(xs.w, ws.w, spec.stride, spec.pad),
                         spec.replicate};
    if (g.ho <= 0 || g.wo <= 0) {
        throw ShapeError("conv2d: input " + xs.str() + " too small for kernel " + std::to_string(ws.h));
    }
    const int cout = ws.n;
    Tensor out(Shape{xs.n, cout, g.ho, g.wo});
    AlignedBuffer col(static_cast<std::size_t>(g.rows()) * g.cols());
    const ConstMatMap wmat(weight.value().ptr(), cout, g.rows());
    for (int n = 0; n < xs.n; ++n) {
        im2col(x.value().plane(n, 0), g, col.data());
        MatMap omat(out.plane(n, 0), cout, g.cols());
        omat.noalias() = wmat * ConstMatMap(col.data(), g.rows(), g.cols());
        if (bias.defined()) {
            for (int o = 0; o < cout; ++o) {
                omat.row(o).array() += bias.value()[o];
            }
        }
    }
    std::vector<Var> parents{x, weight};
    if (bias.defined()) {
        parents.push_back(bias);
    }
    return make_result(
        std::move(out), std::move(parents),
        [x, weight, g, cout](const Tensor&, const Tensor& gout, std::span<Tensor* const> pg) {
            const int batch = x.shape().n;
            AlignedBuffer col(static_cast<std::size_t>(g.rows()) * g.cols());
            const ConstMatMap wmat(weight.value().ptr(), cout, g.rows());
            for (int n = 0; n < batch; ++n) {
                const ConstMatMap gmat(gout.plane(n, 0), cout, g.cols());
                if (pg[1]) {
                    im2col(x.value().plane(n, 0), g, col.data());
                    MatMap(pg[1]->ptr(), cout, g.rows()).noalias() +=
                        gmat * ConstMatMap(col.data(), g.rows(), g.cols()).transpose();
                }
                if (pg.size() > 2 && pg[2]) {
                    for (int o = 0; o < cout; ++o) {
                        (*pg[2])[o] += gmat.row(o).sum();
                    }
                }
                if (pg[0]) {
                    MatMap cmat(col.data(), g.rows(), g.cols());
                    cmat.noalias() = wmat.transpose() * gmat;
                    col2im(col.data(), g, pg[0]->plane(n, 0));
                }
            }
        });
}

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Shape s = x.shape();
    if (gamma.defined() && gamma.shape() != Shape{1, s.c, 1, 1}) {
        throw ShapeError("instance_norm: gamma " + gamma.shape().str() + " for input " + s.str());
    }
    if (beta.defined() && beta.shape() != Shape{1, s.c, 1, 1}) {
        throw ShapeError("instance_norm: beta " + beta.shape().str() + " for input " + s.str());
    }
    const std::size_t hw = s.plane();
    Tensor xhat(s);
    std::vector<double> inv_std(static_cast<std::size_t>(s.n) * s.c);
    Tensor out(s);
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const double* in = x.value().plane(n, c);
            double mu = 0.0;
            for (std::size_t i = 0; i < hw; ++i) {
                mu += in[i];
            }
            mu /= static_cast<double>(hw);
            double var = 0.0;
            for (std::size_t i = 0; i < hw; ++i) {
                const double d = in[i] - mu;
                var += d * d;
            }
            var /= static_cast<double>(hw);
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[static_cast<std::size_t>(n) * s.c + c] = is;
            const double gm = gamma.defined() ? gamma.value()[c] : 1.0;
            const double bt = beta.defined() ? beta.value()[c] : 0.0;
            double* xh = xhat.plane(n, c);
            double* o = out.plane(n, c);
            for (std::size_t i = 0; i < hw; ++i) {
                xh[i] = (in[i] - mu) * is;
                o[i] = gm * xh[i] + bt;
            }
        }
    }
    std::vector<Var> parents{x};
    const bool has_gamma = gamma.defined();
    const bool has_beta = beta.defined();
    if (has_gamma) {
        parents.push_back(gamma);
    }
    if (has_beta) {
        parents.push_back(beta);
    }
    return make_result(std::move(out), std::move(parents),
                       [s, hw, xhat = std::move(xhat), inv_std = std::move(inv_std), gamma, has_gamma, has_beta](
                           const Tensor&, const Tensor& g, std::span<Tensor* const> pg) {
                           Tensor* gx = pg[0];
                           Tensor* ggamma = has_gamma ? pg[1] : nullptr;
                           Tensor* gbeta = has_beta ? pg[has_gamma ? 2 : 1] : nullptr;
                           const double inv_hw = 1.0 / static_cast<double>(hw);
                           for (int n = 0; n < s.n; ++n) {
                               for (int c = 0; c < s.c; ++c) {
                                   const double* gi = g.plane(n, c);
                                   const double* xh = xhat.plane(n, c);
                                   double sum_g = 0.0;
                                   double sum_gx = 0.0;
                                   for (std::size_t i = 0; i < hw; ++i) {
                                       sum_g += gi[i];
                                       sum_gx += gi[i] * xh[i];
                                   }
                                   if (ggamma) {
                                       (*ggamma)[c] += sum_gx;
                                   }
                                   if (gbeta) {
                                       (*gbeta)[c] += sum_g;
                                   }
                                   if (gx) {
                                       const double gm = has_gamma ? gamma.value()[c] : 1.0;
                                       const double is = inv_std[static_cast<std::size_t>(n) * s.c + c];
                                       const double mg = sum_g * inv_hw;
                                       const double mgx = sum_gx * inv_hw;
                                       double* d = gx->plane(n, c);
                                       for (std::size_t i = 0; i < hw; ++i) {
                                           d[i] += gm * is * (gi[i] - mg - xh[i] * mgx);
                                       }
                                   }
                               }
                           }
                       });
}

Var gram(const Var& features, bool normalize) {
    const Shape s = features.shape();
    const int k = static_cast<int>(s.plane());
    const double norm = normalize ? 1.0 / (static_cast<double>(s.c) * k) : 1.0;
    Tensor out(Shape{s.n, 1, s.c, s.c});
    for (int n = 0; n < s.n; ++n) {
        const ConstMatMap f(features.value().plane(n, 0), s.c, k);
        MatMap(out.plane(n, 0), s.c, s.c).noalias() = norm * (f * f.transpose());
    }
    return make_result(std::move(out), {features},
                       [features, s, k, norm](const Tensor&, const Tensor& g, std::span<Tensor* const> pg) {
                           for (int n = 0; n < s.n; ++n) {
                               const ConstMatMap f(features.value().plane(n, 0), s.c, k);
                               const ConstMatMap gg(g.plane(n, 0), s.c, s.c);
                               MatMap(pg[0]->plane(n, 0), s.c, k).noalias() +=
                                   norm * ((gg + gg.transpose()) * f);
                           }
                       });
}

}  // namespace tgan::ag
