#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "spdnet/errors.hpp"
#include "spdnet/tensor.hpp"

namespace spdnet::image {

inline bool has_image_extension(const std::filesystem::path& p) {
    std::string ext = p.extension().string();
    for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

/// Decodes an image file into a (1,3,H,W) tensor with values in [0,1], RGB order.
inline Tensor<float> read_rgb(const std::filesystem::path& path) {
    cv::Mat mat;
    try {
        mat = cv::imread(path.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_COLOR);
    } catch (const cv::Exception& e) {
        throw DecodeError("cannot decode " + path.string() + ": " + e.what());
    }
    if (mat.empty()) throw DecodeError("cannot decode " + path.string());
    if (mat.depth() != CV_8U && mat.depth() != CV_16U) throw DecodeError("unsupported bit depth in " + path.string());
    Tensor<float> out({1, 3, mat.rows, mat.cols});
    const auto fill = [&]<typename P>(float max) {
        for (int y = 0; y < mat.rows; ++y) {
            const auto* row = mat.ptr<cv::Vec<P, 3>>(y);
            for (int x = 0; x < mat.cols; ++x) {
                for (int c = 0; c < 3; ++c) out(0, c, y, x) = static_cast<float>(row[x][2 - c]) / max;
            }
        }
    };
    if (mat.depth() == CV_8U) fill.template operator()<unsigned char>(255.0f);
    else fill.template operator()<unsigned short>(65535.0f);
    return out;
}

/// round(255 v) with halves away from zero, after clamping to [0,1].
inline unsigned char to_byte(double v) {
    if (!(v > 0.0)) return 0;  // also maps NaN to 0
    if (v >= 1.0) return 255;
    return static_cast<unsigned char>(std::round(255.0 * v));
}

template <typename T>
void write_rgb(const std::filesystem::path& path, const Tensor<T>& img, int n = 0) {
    if (img.shape().c != 3) throw InvalidShape("write_rgb: expected 3 channels, got " + img.shape().str());
    cv::Mat mat(img.shape().h, img.shape().w, CV_8UC3);
    for (int y = 0; y < mat.rows; ++y) {
        auto* row = mat.ptr<cv::Vec3b>(y);
        for (int x = 0; x < mat.cols; ++x) {
            for (int c = 0; c < 3; ++c) row[x][2 - c] = to_byte(img(n, c, y, x));
        }
    }
    if (!cv::imwrite(path.string(), mat)) throw Error("cannot write " + path.string());
}

template <typename T>
void write_gray(const std::filesystem::path& path, const Tensor<T>& img, int n = 0) {
    if (img.shape().c != 1) throw InvalidShape("write_gray: expected 1 channel, got " + img.shape().str());
    cv::Mat mat(img.shape().h, img.shape().w, CV_8UC1);
    for (int y = 0; y < mat.rows; ++y) {
        auto* row = mat.ptr<unsigned char>(y);
        for (int x = 0; x < mat.cols; ++x) row[x] = to_byte(img(n, 0, y, x));
    }
    if (!cv::imwrite(path.string(), mat)) throw Error("cannot write " + path.string());
}

}  // namespace spdnet::image
