#pragma once

#include "spdnet/tensor.hpp"

// Single-level orthonormal 2-D Haar transform.
//
// For each non-overlapping 2x2 block with pixels (a, b / c, d) in row-major
// order the analysis produces
//   LL = ( a + b + c + d) / 2      HL = (-a + b - c + d) / 2
//   LH = (-a - b + c + d) / 2      HH = ( a - b - c + d) / 2
// The 4x4 analysis matrix is symmetric and orthogonal, so the synthesis is
// its transpose and each transform is the adjoint of the other.
//
// Subbands are stored as contiguous channel blocks [LL | HL | LH | HH], each
// holding the C input channels in their original order.

namespace spdnet::wavelet {

template <typename T>
Tensor<T> dwt2(const Tensor<T>& x) {
    const Shape s = x.shape();
    if (s.h % 2 != 0 || s.w % 2 != 0) {
        throw InvalidShape("dwt2: spatial size " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                           " is not even");
    }
    const int h = s.h / 2;
    const int w = s.w / 2;
    const T half = T(0.5);
    Tensor<T> y({s.n, 4 * s.c, h, w});
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const T* src = x.plane(n, c);
            T* ll = y.plane(n, c);
            T* hl = y.plane(n, s.c + c);
            T* lh = y.plane(n, 2 * s.c + c);
            T* hh = y.plane(n, 3 * s.c + c);
            for (int i = 0; i < h; ++i) {
                const T* top = src + static_cast<std::size_t>(2 * i) * s.w;
                const T* bottom = top + s.w;
                for (int j = 0; j < w; ++j) {
                    const T a = top[2 * j];
                    const T b = top[2 * j + 1];
                    const T c2 = bottom[2 * j];
                    const T d = bottom[2 * j + 1];
                    const std::size_t o = static_cast<std::size_t>(i) * w + j;
                    ll[o] = half * (a + b + c2 + d);
                    hl[o] = half * (-a + b - c2 + d);
                    lh[o] = half * (-a - b + c2 + d);
                    hh[o] = half * (a - b - c2 + d);
                }
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> iwt2(const Tensor<T>& y) {
    const Shape s = y.shape();
    if (s.c % 4 != 0) {
        throw InvalidShape("iwt2: channel count " + std::to_string(s.c) + " is not divisible by 4");
    }
    const int c_out = s.c / 4;
    const T half = T(0.5);
    Tensor<T> x({s.n, c_out, 2 * s.h, 2 * s.w});
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < c_out; ++c) {
            const T* ll = y.plane(n, c);
            const T* hl = y.plane(n, c_out + c);
            const T* lh = y.plane(n, 2 * c_out + c);
            const T* hh = y.plane(n, 3 * c_out + c);
            T* dst = x.plane(n, c);
            for (int i = 0; i < s.h; ++i) {
                T* top = dst + static_cast<std::size_t>(2 * i) * 2 * s.w;
                T* bottom = top + 2 * s.w;
                for (int j = 0; j < s.w; ++j) {
                    const std::size_t o = static_cast<std::size_t>(i) * s.w + j;
                    top[2 * j] = half * (ll[o] - hl[o] - lh[o] + hh[o]);
                    top[2 * j + 1] = half * (ll[o] + hl[o] - lh[o] - hh[o]);
                    bottom[2 * j] = half * (ll[o] - hl[o] + lh[o] - hh[o]);
                    bottom[2 * j + 1] = half * (ll[o] + hl[o] + lh[o] + hh[o]);
                }
            }
        }
    }
    return x;
}

}  // namespace spdnet::wavelet
