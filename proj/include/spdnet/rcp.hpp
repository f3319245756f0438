#pragma once

#include <algorithm>
#include <array>

#include "spdnet/tensor.hpp"

// Residue channel prior: per-pixel max over RGB minus min over RGB. An
// achromatic additive layer s * (1, 1, 1) shifts every channel equally and
// cancels, which is what makes the prior largely free of rain streaks.

namespace spdnet::rcp {

template <typename T>
void require_rgb(const Tensor<T>& image, const char* what) {
    if (image.shape().c != 3) {
        throw InvalidInput(std::string(what) + ": expected 3 channels, got " +
                           std::to_string(image.shape().c));
    }
}

/// (N, 3, H, W) -> (N, 1, H, W).
template <typename T>
Tensor<T> residue_channel(const Tensor<T>& image) {
    require_rgb(image, "residue_channel");
    const Shape s = image.shape();
    Tensor<T> out({s.n, 1, s.h, s.w});
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n) {
        const T* r = image.plane(n, 0);
        const T* g = image.plane(n, 1);
        const T* b = image.plane(n, 2);
        T* dst = out.plane(n, 0);
        for (std::size_t i = 0; i < plane; ++i) {
            dst[i] = std::max({r[i], g[i], b[i]}) - std::min({r[i], g[i], b[i]});
        }
    }
    return out;
}

/// Index of the max and min channel at each pixel, first index on ties.
/// Used to route the (sub)gradient of residue_channel.
template <typename T>
std::pair<int, int> extreme_channels(const std::array<T, 3>& v) {
    int hi = 0;
    int lo = 0;
    for (int c = 1; c < 3; ++c) {
        if (v[c] > v[hi]) hi = c;
        if (v[c] < v[lo]) lo = c;
    }
    return {hi, lo};
}

/// Divides each channel by its chromaticity weight and clamps to [0, 1].
template <typename T>
Tensor<T> normalize_chromaticity(const Tensor<T>& image, const std::array<double, 3>& alpha = {1.0, 1.0, 1.0}) {
    require_rgb(image, "normalize_chromaticity");
    for (double a : alpha) {
        if (!(a > 0.0)) throw InvalidInput("normalize_chromaticity: alpha components must be positive");
    }
    Tensor<T> out = image;
    const Shape s = image.shape();
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < 3; ++c) {
            T* p = out.plane(n, c);
            const T a = static_cast<T>(alpha[c]);
            for (std::size_t i = 0; i < s.plane(); ++i) p[i] = std::clamp(p[i] / a, T{0}, T{1});
        }
    }
    return out;
}

}  // namespace spdnet::rcp
