#pragma once

#include <vector>

#include <Eigen/Core>

#include "spdnet/tensor.hpp"

// Stride-1 2-D convolution kernels (im2col + GEMM) on NCHW tensors.
// Weights are (out, in, k, k), bias is (out, 1, 1, 1).

namespace spdnet::conv {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Geometry {
    int in_channels;
    int out_channels;
    int kernel;
    int pad;
    int height;
    int width;

    int out_height() const { return height + 2 * pad - kernel + 1; }
    int out_width() const { return width + 2 * pad - kernel + 1; }
    bool direct() const { return kernel == 1 && pad == 0; }
};

namespace detail {

template <typename T>
void im2col(const T* image, const Geometry& g, T* cols) {
    const int oh = g.out_height();
    const int ow = g.out_width();
    const int k = g.kernel;
    for (int c = 0; c < g.in_channels; ++c) {
        const T* src = image + static_cast<std::size_t>(c) * g.height * g.width;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* row = cols;
                cols += static_cast<std::size_t>(oh) * ow;
                for (int y = 0; y < oh; ++y) {
                    const int sy = y + ky - g.pad;
                    T* dst = row + static_cast<std::size_t>(y) * ow;
                    if (sy < 0 || sy >= g.height) {
                        std::fill(dst, dst + ow, T{0});
                        continue;
                    }
                    const T* line = src + static_cast<std::size_t>(sy) * g.width;
                    const int x_begin = std::clamp(g.pad - kx, 0, ow);
                    const int x_end = std::clamp(g.width + g.pad - kx, x_begin, ow);
                    std::fill(dst, dst + x_begin, T{0});
                    for (int x = x_begin; x < x_end; ++x) dst[x] = line[x + kx - g.pad];
                    std::fill(dst + x_end, dst + ow, T{0});
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* cols, const Geometry& g, T* image) {
    const int oh = g.out_height();
    const int ow = g.out_width();
    const int k = g.kernel;
    for (int c = 0; c < g.in_channels; ++c) {
        T* dst = image + static_cast<std::size_t>(c) * g.height * g.width;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* row = cols;
                cols += static_cast<std::size_t>(oh) * ow;
                for (int y = 0; y < oh; ++y) {
                    const int sy = y + ky - g.pad;
                    if (sy < 0 || sy >= g.height) continue;
                    T* line = dst + static_cast<std::size_t>(sy) * g.width;
                    const T* src = row + static_cast<std::size_t>(y) * ow;
                    const int x_begin = std::clamp(g.pad - kx, 0, ow);
                    const int x_end = std::clamp(g.width + g.pad - kx, x_begin, ow);
                    for (int x = x_begin; x < x_end; ++x) line[x + kx - g.pad] += src[x];
                }
            }
        }
    }
}

}  // namespace detail

inline Geometry geometry_for(const Shape& input, const Shape& weight, int pad) {
    if (input.c != weight.c) {
        throw InvalidShape("conv2d: input has " + std::to_string(input.c) + " channels, weights expect " +
                           std::to_string(weight.c));
    }
    if (weight.h != weight.w) throw InvalidShape("conv2d: non-square kernel " + weight.str());
    Geometry g{weight.c, weight.n, weight.h, pad, input.h, input.w};
    if (g.out_height() <= 0 || g.out_width() <= 0) {
        throw InvalidShape("conv2d: input " + input.str() + " too small for kernel " + weight.str());
    }
    return g;
}

template <typename T>
Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int pad) {
    const Geometry g = geometry_for(x.shape(), weight.shape(), pad);
    const int n = x.shape().n;
    const int oh = g.out_height();
    const int ow = g.out_width();
    const Eigen::Index patch = static_cast<Eigen::Index>(g.in_channels) * g.kernel * g.kernel;
    const Eigen::Index pixels = static_cast<Eigen::Index>(oh) * ow;

    Tensor<T> y({n, g.out_channels, oh, ow});
    Eigen::Map<const RowMatrix<T>> w(weight.data(), g.out_channels, patch);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(bias.data(), g.out_channels);
    AlignedVector<T> scratch(g.direct() ? 0 : static_cast<std::size_t>(patch * pixels));

    for (int i = 0; i < n; ++i) {
        const T* image = x.plane(i, 0);
        const T* cols = image;
        if (!g.direct()) {
            detail::im2col(image, g, scratch.data());
            cols = scratch.data();
        }
        Eigen::Map<const RowMatrix<T>> c(cols, patch, pixels);
        Eigen::Map<RowMatrix<T>> out(y.plane(i, 0), g.out_channels, pixels);
        out.noalias() = w * c;
        out.colwise() += b;
    }
    return y;
}

/// Accumulates parameter gradients and (optionally) the input gradient.
template <typename T>
void backward(const Tensor<T>& x, const Tensor<T>& weight, int pad, const Tensor<T>& grad_out,
              Tensor<T>* grad_x, Tensor<T>* grad_w, Tensor<T>* grad_b) {
    const Geometry g = geometry_for(x.shape(), weight.shape(), pad);
    const int n = x.shape().n;
    const Eigen::Index patch = static_cast<Eigen::Index>(g.in_channels) * g.kernel * g.kernel;
    const Eigen::Index pixels = static_cast<Eigen::Index>(g.out_height()) * g.out_width();

    Eigen::Map<const RowMatrix<T>> w(weight.data(), g.out_channels, patch);
    AlignedVector<T> scratch(g.direct() ? 0 : static_cast<std::size_t>(patch * pixels));

    for (int i = 0; i < n; ++i) {
        Eigen::Map<const RowMatrix<T>> dy(grad_out.plane(i, 0), g.out_channels, pixels);
        if (grad_b) {
            Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(grad_b->data(), g.out_channels);
            db += dy.rowwise().sum();
        }
        if (grad_w) {
            const T* cols = x.plane(i, 0);
            if (!g.direct()) {
                detail::im2col(x.plane(i, 0), g, scratch.data());
                cols = scratch.data();
            }
            Eigen::Map<const RowMatrix<T>> c(cols, patch, pixels);
            Eigen::Map<RowMatrix<T>> dw(grad_w->data(), g.out_channels, patch);
            dw.noalias() += dy * c.transpose();
        }
        if (grad_x) {
            if (g.direct()) {
                Eigen::Map<RowMatrix<T>> dx(grad_x->plane(i, 0), patch, pixels);
                dx.noalias() += w.transpose() * dy;
            } else {
                Eigen::Map<RowMatrix<T>> dcols(scratch.data(), patch, pixels);
                dcols.noalias() = w.transpose() * dy;
                detail::col2im_add(scratch.data(), g, grad_x->plane(i, 0));
            }
        }
    }
}

}  // namespace spdnet::conv
