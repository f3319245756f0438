#pragma once

#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "spdnet/errors.hpp"
#include "spdnet/tensor.hpp"

namespace spdnet::metrics {

/// Studio-swing BT.601 luma, (N,3,H,W) in [0,1] -> (N,1,H,W) in [16/255, 235/255].
template <typename T>
Tensor<double> luminance(const Tensor<T>& rgb) {
    const Shape s = rgb.shape();
    if (s.c != 3) throw InvalidInput("luminance: expected 3 channels, got " + s.str());
    Tensor<double> out({s.n, 1, s.h, s.w});
    for (int n = 0; n < s.n; ++n) {
        const T* r = rgb.plane(n, 0);
        const T* g = rgb.plane(n, 1);
        const T* b = rgb.plane(n, 2);
        double* y = out.plane(n, 0);
        for (std::size_t i = 0; i < s.plane(); ++i) {
            y[i] = (16.0 + 65.481 * r[i] + 128.553 * g[i] + 24.966 * b[i]) / 255.0;
        }
    }
    return out;
}

/// 10 log10(range^2 / MSE); +infinity for identical inputs.
template <typename T>
double psnr(const Tensor<T>& pred, const Tensor<T>& gt, double data_range = 1.0) {
    if (pred.shape() != gt.shape()) {
        throw InvalidInput("psnr: shape mismatch " + pred.shape().str() + " vs " + gt.shape().str());
    }
    if (pred.size() == 0) throw InvalidInput("psnr: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred[i]) - static_cast<double>(gt[i]);
        acc += d * d;
    }
    if (acc == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(data_range * data_range / (acc / static_cast<double>(pred.size())));
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> g(size);
    const double mid = 0.5 * (size - 1);
    for (int i = 0; i < size; ++i) g[i] = std::exp(-0.5 * (i - mid) * (i - mid) / (sigma * sigma));
    const double total = std::accumulate(g.begin(), g.end(), 0.0);
    for (auto& v : g) v /= total;
    return g;
}

// Separable valid-region filtering of an h x w plane.
inline std::vector<double> filter_valid(const std::vector<double>& img, int h, int w, const std::vector<double>& g) {
    const int k = static_cast<int>(g.size());
    const int oh = h - k + 1;
    const int ow = w - k + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < k; ++i) acc += g[i] * img[static_cast<std::size_t>(y) * w + x + i];
            rows[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < k; ++i) acc += g[i] * rows[static_cast<std::size_t>(y + i) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    }
    return out;
}

}  // namespace detail

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

/// Mean SSIM over all valid 11x11 Gaussian windows (sigma 1.5, K1 0.01,
/// K2 0.03, data range 1). Inputs are single-channel (1,1,H,W).
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw InvalidInput("ssim: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    const Shape s = a.shape();
    if (s.n != 1 || s.c != 1) throw InvalidInput("ssim: expected a single-channel image, got " + s.str());
    if (s.h < kSsimWindow || s.w < kSsimWindow) {
        throw InvalidInput("ssim: image " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                           " is smaller than the 11x11 window");
    }
    const double c1 = 0.01 * 0.01;
    const double c2 = 0.03 * 0.03;
    const auto g = detail::gaussian_window(kSsimWindow, kSsimSigma);
    const std::size_t n = s.plane();
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = a[i];
        y[i] = b[i];
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto mx = detail::filter_valid(x, s.h, s.w, g);
    const auto my = detail::filter_valid(y, s.h, s.w, g);
    const auto exx = detail::filter_valid(xx, s.h, s.w, g);
    const auto eyy = detail::filter_valid(yy, s.h, s.w, g);
    const auto exy = detail::filter_valid(xy, s.h, s.w, g);
    double total = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double sxx = exx[i] - mx[i] * mx[i];
        const double syy = eyy[i] - my[i] * my[i];
        const double sxy = exy[i] - mx[i] * my[i];
        total += ((2 * mx[i] * my[i] + c1) * (2 * sxy + c2)) /
                 ((mx[i] * mx[i] + my[i] * my[i] + c1) * (sxx + syy + c2));
    }
    return total / static_cast<double>(mx.size());
}

struct ImageMetrics {
    std::string key;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct MetricReport {
    std::vector<ImageMetrics> per_image;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;

    void add(ImageMetrics m) { per_image.push_back(std::move(m)); }

    void finalize() {
        mean_psnr = 0.0;
        mean_ssim = 0.0;
        if (per_image.empty()) return;
        for (const auto& m : per_image) {
            mean_psnr += m.psnr;
            mean_ssim += m.ssim;
        }
        mean_psnr /= static_cast<double>(per_image.size());
        mean_ssim /= static_cast<double>(per_image.size());
    }
};

/// PSNR and SSIM of the Y channel of two RGB images (1,3,H,W).
template <typename T>
ImageMetrics compare_rgb(const Tensor<T>& pred, const Tensor<T>& gt, std::string key = {}) {
    if (pred.shape() != gt.shape()) {
        throw InvalidInput("compare: shape mismatch for " + key + ": " + pred.shape().str() + " vs " + gt.shape().str());
    }
    const auto yp = luminance(pred);
    const auto yg = luminance(gt);
    return {std::move(key), psnr(yp, yg), ssim(yp, yg)};
}

// JSON has no infinity; identical images are written as the string "inf".
inline nlohmann::json psnr_to_json(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

inline nlohmann::json to_json(const MetricReport& r) {
    nlohmann::json images = nlohmann::json::array();
    for (const auto& m : r.per_image) images.push_back({{"key", m.key}, {"psnr", psnr_to_json(m.psnr)}, {"ssim", m.ssim}});
    return {{"per_image", images},
            {"mean_psnr", psnr_to_json(r.mean_psnr)},
            {"mean_ssim", r.mean_ssim},
            {"count", r.per_image.size()},
            {"channel", "Y (BT.601 studio swing)"}};
}

}  // namespace spdnet::metrics
