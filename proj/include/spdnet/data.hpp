#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "spdnet/errors.hpp"
#include "spdnet/image_io.hpp"
#include "spdnet/random.hpp"
#include "spdnet/tensor.hpp"

namespace spdnet {

/// Aligned (rainy, clean) pair; both (1,3,H,W).
template <typename T>
struct BasicRainPair {
    Tensor<T> rainy;
    Tensor<T> clean;
    std::string key;
};

using RainPair = BasicRainPair<float>;

template <typename T>
struct Range {
    T lo;
    T hi;

    bool valid() const { return lo <= hi; }
};

/// Achromatic streak synthesis. One direction per image, drawn from `angle`
/// (degrees from horizontal); every streak adds a single intensity to R, G and B.
struct SynthRainParams {
    Range<int> num_streaks{20, 60};
    Range<double> angle{60.0, 120.0};
    Range<double> length{8.0, 30.0};
    Range<double> width{0.8, 1.8};
    Range<double> intensity{0.1, 0.5};
    int blur_kernel_len = 5;
    std::uint64_t seed = 0;

    void validate() const {
        if (!num_streaks.valid() || num_streaks.lo < 0) throw InvalidInput("SynthRainParams: bad num_streaks range");
        if (!angle.valid()) throw InvalidInput("SynthRainParams: bad angle range");
        if (!length.valid() || length.lo <= 0) throw InvalidInput("SynthRainParams: bad length range");
        if (!width.valid() || width.lo <= 0) throw InvalidInput("SynthRainParams: bad width range");
        if (!intensity.valid() || intensity.lo <= 0 || intensity.hi > 0.8) {
            throw InvalidInput("SynthRainParams: intensity range must lie within (0, 0.8]");
        }
        if (blur_kernel_len < 1) throw InvalidInput("SynthRainParams: blur_kernel_len must be >= 1");
    }
};

namespace detail {

inline double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
    const double dx = bx - ax;
    const double dy = by - ay;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double ex = px - (ax + t * dx);
    const double ey = py - (ay + t * dy);
    return std::sqrt(ex * ex + ey * ey);
}

inline double sample_bilinear(const std::vector<double>& img, int h, int w, double y, double x) {
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    const int y0 = static_cast<int>(y);
    const int x0 = static_cast<int>(x);
    const int y1 = std::min(y0 + 1, h - 1);
    const int x1 = std::min(x0 + 1, w - 1);
    const double fy = y - y0;
    const double fx = x - x0;
    const auto at = [&](int yy, int xx) { return img[static_cast<std::size_t>(yy) * w + xx]; };
    return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

}  // namespace detail

/// Single-channel streak mask in [0, intensity.hi], row-major H x W.
inline std::vector<double> render_streak_mask(int h, int w, const SynthRainParams& params, Rng& rng) {
    params.validate();
    std::vector<double> mask(static_cast<std::size_t>(h) * w, 0.0);
    const double theta = rng.uniform(params.angle.lo, params.angle.hi) * std::numbers::pi / 180.0;
    const double ux = std::cos(theta);
    const double uy = -std::sin(theta);  // image rows grow downwards
    const auto count = rng.uniform_int(params.num_streaks.lo, params.num_streaks.hi);
    for (std::int64_t k = 0; k < count; ++k) {
        const double cx = rng.uniform(-0.1 * w, 1.1 * w);
        const double cy = rng.uniform(-0.1 * h, 1.1 * h);
        const double len = rng.uniform(params.length.lo, params.length.hi);
        const double half_width = 0.5 * rng.uniform(params.width.lo, params.width.hi);
        const double s = rng.uniform(params.intensity.lo, params.intensity.hi);
        const double ax = cx - 0.5 * len * ux, ay = cy - 0.5 * len * uy;
        const double bx = cx + 0.5 * len * ux, by = cy + 0.5 * len * uy;
        const double reach = half_width + 1.0;
        const int x_lo = std::max(0, static_cast<int>(std::floor(std::min(ax, bx) - reach)));
        const int x_hi = std::min(w - 1, static_cast<int>(std::ceil(std::max(ax, bx) + reach)));
        const int y_lo = std::max(0, static_cast<int>(std::floor(std::min(ay, by) - reach)));
        const int y_hi = std::min(h - 1, static_cast<int>(std::ceil(std::max(ay, by) + reach)));
        for (int y = y_lo; y <= y_hi; ++y) {
            for (int x = x_lo; x <= x_hi; ++x) {
                // pixel-area coverage approximated by a one-pixel linear ramp at the edge
                const double d = detail::segment_distance(x + 0.5, y + 0.5, ax, ay, bx, by);
                const double coverage = std::clamp(half_width + 0.5 - d, 0.0, 1.0);
                auto& m = mask[static_cast<std::size_t>(y) * w + x];
                m = std::max(m, s * coverage);
            }
        }
    }
    if (params.blur_kernel_len > 1) {
        std::vector<double> blurred(mask.size(), 0.0);
        const int L = params.blur_kernel_len;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int i = 0; i < L; ++i) {
                    const double t = i - 0.5 * (L - 1);
                    acc += detail::sample_bilinear(mask, h, w, y + t * uy, x + t * ux);
                }
                blurred[static_cast<std::size_t>(y) * w + x] = acc / L;
            }
        }
        mask.swap(blurred);
    }
    return mask;
}

/// rainy = clamp(clean + mask * (1,1,1), 0, 1).
template <typename T>
BasicRainPair<T> synth_rain(const Tensor<T>& clean, const SynthRainParams& params, Rng& rng, std::string key = {}) {
    if (clean.shape().n != 1 || clean.shape().c != 3) {
        throw InvalidInput("synth_rain: expected a (1,3,H,W) image, got " + clean.shape().str());
    }
    const int h = clean.shape().h;
    const int w = clean.shape().w;
    const auto mask = render_streak_mask(h, w, params, rng);
    BasicRainPair<T> out{clean, clean, std::move(key)};
    for (int c = 0; c < 3; ++c) {
        T* dst = out.rainy.plane(0, c);
        for (std::size_t i = 0; i < mask.size(); ++i) {
            dst[i] = std::clamp(dst[i] + static_cast<T>(mask[i]), T{0}, T{1});
        }
    }
    return out;
}

template <typename T>
BasicRainPair<T> synth_rain(const Tensor<T>& clean, const SynthRainParams& params, std::string key = {}) {
    Rng rng(params.seed);
    return synth_rain(clean, params, rng, std::move(key));
}

/// Same window (and the same optional horizontal flip) for both images.
template <typename T>
BasicRainPair<T> random_patch(const BasicRainPair<T>& pair, int size, Rng& rng, bool hflip = true) {
    const Shape s = pair.rainy.shape();
    if (pair.clean.shape() != s) throw DatasetIntegrity("pair " + pair.key + ": rainy and clean sizes differ");
    if (size < 1 || s.h < size || s.w < size) {
        throw InvalidInput("random_patch: image " + pair.key + " (" + std::to_string(s.h) + "x" + std::to_string(s.w) +
                           ") is smaller than patch size " + std::to_string(size));
    }
    const int y0 = static_cast<int>(rng.uniform_int(0, s.h - size));
    const int x0 = static_cast<int>(rng.uniform_int(0, s.w - size));
    const bool flip = hflip && rng.bernoulli(0.5);
    const auto crop = [&](const Tensor<T>& img) {
        Tensor<T> out({1, s.c, size, size});
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < size; ++y) {
                for (int x = 0; x < size; ++x) {
                    out(0, c, y, flip ? size - 1 - x : x) = img(0, c, y0 + y, x0 + x);
                }
            }
        }
        return out;
    };
    return {crop(pair.rainy), crop(pair.clean), pair.key};
}

/// Original size of a padded image.
struct CropRecord {
    int height = 0;
    int width = 0;

    friend bool operator==(const CropRecord&, const CropRecord&) = default;
};

/// Mirror index without repeating the edge sample (…c b | a b c d | c b…).
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

/// Reflect-pads right and bottom up to the next multiple of m.
template <typename T>
std::pair<Tensor<T>, CropRecord> pad_to_multiple(const Tensor<T>& img, int m) {
    if (m < 1) throw InvalidInput("pad_to_multiple: m must be >= 1");
    const Shape s = img.shape();
    const CropRecord record{s.h, s.w};
    const int ph = (s.h + m - 1) / m * m;
    const int pw = (s.w + m - 1) / m * m;
    if (ph == s.h && pw == s.w) return {img, record};
    Tensor<T> out({s.n, s.c, ph, pw});
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < ph; ++y) {
                const int sy = reflect_index(y, s.h);
                for (int x = 0; x < pw; ++x) out(n, c, y, x) = img(n, c, sy, reflect_index(x, s.w));
            }
        }
    }
    return {std::move(out), record};
}

template <typename T>
Tensor<T> unpad(const Tensor<T>& img, const CropRecord& record) {
    const Shape s = img.shape();
    if (record.height > s.h || record.width > s.w) throw InvalidShape("unpad: crop record exceeds image");
    if (record.height == s.h && record.width == s.w) return img;
    Tensor<T> out({s.n, s.c, record.height, record.width});
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < record.height; ++y) {
                std::copy_n(img.plane(n, c) + static_cast<std::size_t>(y) * s.w, record.width,
                            out.plane(n, c) + static_cast<std::size_t>(y) * record.width);
            }
        }
    }
    return out;
}

/// Rain-free stand-in scene: a smooth colour gradient with a few soft
/// rectangles, discs and stripes.
inline Tensor<float> procedural_scene(int h, int w, Rng& rng) {
    if (h < 1 || w < 1) throw InvalidInput("procedural_scene: empty size");
    const auto color = [&] { return std::array<double, 3>{rng.uniform(), rng.uniform(), rng.uniform()}; };
    std::array<std::array<double, 3>, 4> corner{color(), color(), color(), color()};
    std::vector<double> img(static_cast<std::size_t>(3) * h * w);
    const auto at = [&](int c, int y, int x) -> double& { return img[(static_cast<std::size_t>(c) * h + y) * w + x]; };
    for (int y = 0; y < h; ++y) {
        const double fy = h > 1 ? static_cast<double>(y) / (h - 1) : 0.0;
        for (int x = 0; x < w; ++x) {
            const double fx = w > 1 ? static_cast<double>(x) / (w - 1) : 0.0;
            for (int c = 0; c < 3; ++c) {
                at(c, y, x) = 0.6 * ((1 - fy) * ((1 - fx) * corner[0][c] + fx * corner[1][c]) +
                                     fy * ((1 - fx) * corner[2][c] + fx * corner[3][c]));
            }
        }
    }
    const auto shapes = rng.uniform_int(3, 8);
    for (std::int64_t k = 0; k < shapes; ++k) {
        const auto kind = rng.uniform_int(0, 2);
        const auto col = color();
        const double alpha = rng.uniform(0.5, 0.9);
        const double cx = rng.uniform(0.0, w);
        const double cy = rng.uniform(0.0, h);
        const double rx = rng.uniform(0.08, 0.35) * w;
        const double ry = rng.uniform(0.08, 0.35) * h;
        const double freq = rng.uniform(0.15, 0.6);
        const double phase = rng.uniform(0.0, 2 * std::numbers::pi);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double dx = (x + 0.5 - cx) / rx;
                const double dy = (y + 0.5 - cy) / ry;
                double inside = 0.0;
                if (kind == 0) {
                    inside = std::clamp((1.0 - std::max(std::abs(dx), std::abs(dy))) * 8.0, 0.0, 1.0);
                } else if (kind == 1) {
                    inside = std::clamp((1.0 - std::sqrt(dx * dx + dy * dy)) * 8.0, 0.0, 1.0);
                } else {
                    inside = std::clamp((1.0 - std::abs(dy)) * 8.0, 0.0, 1.0) *
                             (0.5 + 0.5 * std::sin(freq * (x + 0.5) + phase));
                }
                const double a = alpha * inside;
                for (int c = 0; c < 3; ++c) at(c, y, x) = (1 - a) * at(c, y, x) + a * col[c];
            }
        }
    }
    Tensor<float> out({1, 3, h, w});
    for (std::size_t i = 0; i < img.size(); ++i) out[i] = static_cast<float>(std::clamp(img[i], 0.0, 1.0));
    return out;
}

/// Procedural scenes with synthetic rain; pair i depends only on (seed, i).
inline std::vector<RainPair> synthetic_dataset(int count, int h, int w, const SynthRainParams& params,
                                               std::uint64_t seed) {
    std::vector<RainPair> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        Rng scene_rng = Rng::derive(seed, static_cast<std::uint64_t>(i), 0);
        Rng rain_rng = Rng::derive(seed, static_cast<std::uint64_t>(i), 1);
        char key[32];
        std::snprintf(key, sizeof key, "scene_%04d", i);
        out.push_back(synth_rain(procedural_scene(h, w, scene_rng), params, rain_rng, key));
    }
    return out;
}

namespace detail {

inline std::map<std::string, std::filesystem::path> images_by_stem(const std::filesystem::path& dir) {
    std::map<std::string, std::filesystem::path> out;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file() || !image::has_image_extension(entry.path())) continue;
        const std::string stem = entry.path().stem().string();
        if (!out.emplace(stem, entry.path()).second) {
            throw DatasetIntegrity("duplicate key '" + stem + "' in " + dir.string());
        }
    }
    return out;
}

}  // namespace detail

/// Reads root/rainy and root/gt, matched by file stem, in lexicographic key order.
inline std::vector<RainPair> load_pairs(const std::filesystem::path& root) {
    const auto rainy_dir = root / "rainy";
    const auto gt_dir = root / "gt";
    for (const auto& d : {rainy_dir, gt_dir}) {
        if (!std::filesystem::is_directory(d)) throw DatasetIntegrity("missing directory " + d.string());
    }
    const auto rainy = detail::images_by_stem(rainy_dir);
    const auto gt = detail::images_by_stem(gt_dir);
    std::vector<std::string> missing;
    for (const auto& [k, p] : rainy) {
        if (!gt.count(k)) missing.push_back(k + " (no gt)");
    }
    for (const auto& [k, p] : gt) {
        if (!rainy.count(k)) missing.push_back(k + " (no rainy)");
    }
    if (!missing.empty()) {
        std::string msg = "unmatched keys in " + root.string() + ":";
        for (const auto& m : missing) msg += " " + m;
        throw DatasetIntegrity(msg);
    }
    std::vector<RainPair> out;
    for (const auto& [k, p] : rainy) {
        RainPair pair{image::read_rgb(p), image::read_rgb(gt.at(k)), k};
        if (pair.rainy.shape() != pair.clean.shape()) {
            throw DatasetIntegrity("size mismatch for key " + k + ": " + pair.rainy.shape().str() + " vs " +
                                   pair.clean.shape().str());
        }
        out.push_back(std::move(pair));
    }
    return out;
}

/// Writes root/rainy/<key>.png and root/gt/<key>.png.
inline void save_pairs(const std::filesystem::path& root, const std::vector<RainPair>& pairs) {
    std::filesystem::create_directories(root / "rainy");
    std::filesystem::create_directories(root / "gt");
    for (const auto& p : pairs) {
        image::write_rgb(root / "rainy" / (p.key + ".png"), p.rainy);
        image::write_rgb(root / "gt" / (p.key + ".png"), p.clean);
    }
}

}  // namespace spdnet
