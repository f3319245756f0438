#pragma once

#include <cmath>
#include <span>

#include "spdnet/autograd.hpp"
#include "spdnet/conv.hpp"
#include "spdnet/rcp.hpp"
#include "spdnet/wavelet.hpp"

// Differentiable operations on Var. Each forward computes a fresh Tensor and
// registers a closure that maps the output gradient onto its inputs.

namespace spdnet::ops {

namespace detail {
template <typename T>
Tensor<T>* grad_of(Node<T>* node) {
    return node->requires_grad ? &node->grad_buffer() : nullptr;
}
}  // namespace detail

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int pad) {
    Tensor<T> y = conv::forward(x.value(), weight.value(), bias.value(), pad);
    Node<T>* xn = x.raw();
    Node<T>* wn = weight.raw();
    Node<T>* bn = bias.raw();
    return make_result<T>(std::move(y), {x, weight, bias}, [xn, wn, bn, pad](const Tensor<T>& g) {
        conv::backward(xn->value, wn->value, pad, g, detail::grad_of(xn), detail::grad_of(wn),
                       detail::grad_of(bn));
    });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    a.value().require_same_shape(b.value(), "add");
    Tensor<T> y = a.value();
    y += b.value();
    Node<T>* an = a.raw();
    Node<T>* bn = b.raw();
    return make_result<T>(std::move(y), {a, b}, [an, bn](const Tensor<T>& g) {
        if (an->requires_grad) an->grad_buffer() += g;
        if (bn->requires_grad) bn->grad_buffer() += g;
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    a.value().require_same_shape(b.value(), "sub");
    Tensor<T> y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
    Node<T>* an = a.raw();
    Node<T>* bn = b.raw();
    return make_result<T>(std::move(y), {a, b}, [an, bn](const Tensor<T>& g) {
        if (an->requires_grad) an->grad_buffer() += g;
        if (bn->requires_grad) {
            auto& gb = bn->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

/// Element-wise product of equally shaped inputs.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    a.value().require_same_shape(b.value(), "mul");
    Tensor<T> y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
    Node<T>* an = a.raw();
    Node<T>* bn = b.raw();
    return make_result<T>(std::move(y), {a, b}, [an, bn](const Tensor<T>& g) {
        if (an->requires_grad) {
            auto& ga = an->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->value[i];
        }
        if (bn->requires_grad) {
            auto& gb = bn->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->value[i];
        }
    });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
    Tensor<T> y = x.value();
    for (auto& v : y.values()) v = v > T{0} ? v : T{0};
    Node<T>* xn = x.raw();
    return make_result<T>(std::move(y), {x}, [xn](const Tensor<T>& g) {
        auto& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (xn->value[i] > T{0}) gx[i] += g[i];
        }
    });
}

template <typename T>
T sigmoid_scalar(T v) {
    return T{1} / (T{1} + std::exp(-v));
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    Tensor<T> y = x.value();
    for (auto& v : y.values()) v = sigmoid_scalar(v);
    Node<T>* xn = x.raw();
    return make_result<T>(std::move(y), {x}, [xn](const Tensor<T>& g) {
        auto& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T s = sigmoid_scalar(xn->value[i]);
            gx[i] += g[i] * s * (T{1} - s);
        }
    });
}

/// Spatial mean: (N, C, H, W) -> (N, C, 1, 1).
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
    const Shape s = x.shape();
    Tensor<T> y({s.n, s.c, 1, 1});
    const T inv = T{1} / static_cast<T>(s.plane());
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const T* p = x.value().plane(n, c);
            T acc{0};
            for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
            y(n, c, 0, 0) = acc * inv;
        }
    }
    Node<T>* xn = x.raw();
    return make_result<T>(std::move(y), {x}, [xn, s, inv](const Tensor<T>& g) {
        auto& gx = xn->grad_buffer();
        for (int n = 0; n < s.n; ++n) {
            for (int c = 0; c < s.c; ++c) {
                const T v = g(n, c, 0, 0) * inv;
                T* p = gx.plane(n, c);
                for (std::size_t i = 0; i < s.plane(); ++i) p[i] += v;
            }
        }
    });
}

/// x (N, C, H, W) scaled by a per-(n, c) factor gate (N, C, 1, 1).
template <typename T>
Var<T> channel_scale(const Var<T>& x, const Var<T>& gate) {
    const Shape s = x.shape();
    const Shape gs = gate.shape();
    if (gs.n != s.n || gs.c != s.c || gs.h != 1 || gs.w != 1) {
        throw InvalidShape("channel_scale: gate " + gs.str() + " does not match " + s.str());
    }
    Tensor<T> y = x.value();
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const T v = gate.value()(n, c, 0, 0);
            T* p = y.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) p[i] *= v;
        }
    }
    Node<T>* xn = x.raw();
    Node<T>* gn = gate.raw();
    return make_result<T>(std::move(y), {x, gate}, [xn, gn, s](const Tensor<T>& g) {
        for (int n = 0; n < s.n; ++n) {
            for (int c = 0; c < s.c; ++c) {
                const T* go = g.plane(n, c);
                if (xn->requires_grad) {
                    const T v = gn->value(n, c, 0, 0);
                    T* gx = xn->grad_buffer().plane(n, c);
                    for (std::size_t i = 0; i < s.plane(); ++i) gx[i] += go[i] * v;
                }
                if (gn->requires_grad) {
                    const T* xv = xn->value.plane(n, c);
                    T acc{0};
                    for (std::size_t i = 0; i < s.plane(); ++i) acc += go[i] * xv[i];
                    gn->grad_buffer()(n, c, 0, 0) += acc;
                }
            }
        }
    });
}

/// Concatenation along the channel axis.
template <typename T>
Var<T> concat_channels(std::span<const Var<T>> parts) {
    if (parts.empty()) throw InvalidShape("concat_channels: no inputs");
    Shape s = parts.front().shape();
    int channels = 0;
    for (const auto& p : parts) {
        const Shape q = p.shape();
        if (q.n != s.n || q.h != s.h || q.w != s.w) {
            throw InvalidShape("concat_channels: " + q.str() + " vs " + s.str());
        }
        channels += q.c;
    }
    s.c = channels;
    Tensor<T> y(s);
    std::vector<Node<T>*> nodes;
    for (int n = 0; n < s.n; ++n) {
        T* dst = y.plane(n, 0);
        for (const auto& p : parts) {
            const std::size_t count = static_cast<std::size_t>(p.shape().c) * s.plane();
            dst = std::copy_n(p.value().plane(n, 0), count, dst);
        }
    }
    for (const auto& p : parts) nodes.push_back(p.raw());
    std::vector<Var<T>> inputs(parts.begin(), parts.end());
    return make_result<T>(std::move(y), std::move(inputs), [nodes, s](const Tensor<T>& g) {
        for (int n = 0; n < s.n; ++n) {
            const T* src = g.plane(n, 0);
            for (Node<T>* node : nodes) {
                const std::size_t count = static_cast<std::size_t>(node->value.shape().c) * s.plane();
                if (node->requires_grad) {
                    T* dst = node->grad_buffer().plane(n, 0);
                    for (std::size_t i = 0; i < count; ++i) dst[i] += src[i];
                }
                src += count;
            }
        }
    });
}

template <typename T>
Var<T> concat_channels(std::initializer_list<Var<T>> parts) {
    return concat_channels<T>(std::span<const Var<T>>(parts.begin(), parts.size()));
}

template <typename T>
Var<T> dwt2(const Var<T>& x) {
    Node<T>* xn = x.raw();
    return make_result<T>(wavelet::dwt2(x.value()), {x},
                          [xn](const Tensor<T>& g) { xn->grad_buffer() += wavelet::iwt2(g); });
}

template <typename T>
Var<T> iwt2(const Var<T>& y) {
    Node<T>* yn = y.raw();
    return make_result<T>(wavelet::iwt2(y.value()), {y},
                          [yn](const Tensor<T>& g) { yn->grad_buffer() += wavelet::dwt2(g); });
}

/// Residue channel with subgradient routed to the first max / first min channel.
template <typename T>
Var<T> residue_channel(const Var<T>& image) {
    Node<T>* xn = image.raw();
    return make_result<T>(rcp::residue_channel(image.value()), {image}, [xn](const Tensor<T>& g) {
        const Shape s = xn->value.shape();
        auto& gx = xn->grad_buffer();
        for (int n = 0; n < s.n; ++n) {
            const T* go = g.plane(n, 0);
            for (std::size_t i = 0; i < s.plane(); ++i) {
                const std::array<T, 3> v{xn->value.plane(n, 0)[i], xn->value.plane(n, 1)[i],
                                         xn->value.plane(n, 2)[i]};
                const auto [hi, lo] = rcp::extreme_channels(v);
                gx.plane(n, hi)[i] += go[i];
                gx.plane(n, lo)[i] -= go[i];
            }
        }
    });
}

/// Gradient passes where lo <= x <= hi.
template <typename T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
    Tensor<T> y = x.value();
    for (auto& v : y.values()) v = std::clamp(v, lo, hi);
    Node<T>* xn = x.raw();
    return make_result<T>(std::move(y), {x}, [xn, lo, hi](const Tensor<T>& g) {
        auto& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T v = xn->value[i];
            if (v >= lo && v <= hi) gx[i] += g[i];
        }
    });
}

/// Mean squared error against a constant target, as a (1, 1, 1, 1) scalar.
template <typename T>
Var<T> mse(const Var<T>& pred, const Tensor<T>& target) {
    pred.value().require_same_shape(target, "mse");
    const std::size_t count = target.size();
    // Accumulate in double so the float32 loss does not depend on summation drift.
    double acc = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        const double d = static_cast<double>(pred.value()[i]) - static_cast<double>(target[i]);
        acc += d * d;
    }
    Tensor<T> y({1, 1, 1, 1}, static_cast<T>(acc / static_cast<double>(count)));
    Node<T>* pn = pred.raw();
    auto tgt = std::make_shared<Tensor<T>>(target);
    return make_result<T>(std::move(y), {pred}, [pn, tgt, count](const Tensor<T>& g) {
        auto& gp = pn->grad_buffer();
        const T scale = T{2} * g[0] / static_cast<T>(count);
        for (std::size_t i = 0; i < count; ++i) gp[i] += scale * (pn->value[i] - (*tgt)[i]);
    });
}

/// Sum of all elements, as a (1, 1, 1, 1) scalar.
template <typename T>
Var<T> sum(const Var<T>& x) {
    T acc{0};
    for (T v : x.value().values()) acc += v;
    Node<T>* xn = x.raw();
    return make_result<T>(Tensor<T>({1, 1, 1, 1}, acc), {x}, [xn](const Tensor<T>& g) {
        auto& gx = xn->grad_buffer();
        for (auto& v : gx.values()) v += g[0];
    });
}

/// Weighted sum of all elements with a constant weight tensor; handy for
/// gradient checks where a plain sum would hide sign errors.
template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights) {
    x.value().require_same_shape(weights, "weighted_sum");
    T acc{0};
    for (std::size_t i = 0; i < weights.size(); ++i) acc += x.value()[i] * weights[i];
    Node<T>* xn = x.raw();
    auto w = std::make_shared<Tensor<T>>(weights);
    return make_result<T>(Tensor<T>({1, 1, 1, 1}, acc), {x}, [xn, w](const Tensor<T>& g) {
        auto& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < w->size(); ++i) gx[i] += g[0] * (*w)[i];
    });
}

}  // namespace spdnet::ops
