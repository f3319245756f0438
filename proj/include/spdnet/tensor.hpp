#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "spdnet/errors.hpp"

namespace spdnet {

/// Cache-line aligned storage. Vectorized reductions peel by address, so a fixed
/// alignment keeps summation order (and results) identical across runs.
template <typename T, std::size_t Align = 64>
struct AlignedAllocator {
    using value_type = T;
    template <typename U>
    struct rebind {
        using other = AlignedAllocator<U, Align>;
    };
    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U, Align>&) noexcept {}
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{Align})); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{Align}); }
    template <typename U>
    bool operator==(const AlignedAllocator<U, Align>&) const noexcept { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dimensions of a rank-4 array in batch x channels x height x width order.
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    constexpr std::size_t size() const noexcept {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    constexpr std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }

    friend constexpr bool operator==(const Shape&, const Shape&) = default;

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }
};

/// Dense NCHW array with value semantics. Used for images, priors, features
/// and parameters alike.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{0}) : shape_(shape), data_(checked_size(shape), fill) {}

    Tensor(Shape shape, std::vector<T> values) : shape_(shape), data_(values.begin(), values.end()) {
        if (data_.size() != checked_size(shape)) {
            throw InvalidShape("tensor data length " + std::to_string(data_.size()) +
                               " does not match shape " + shape.str());
        }
    }

    static Tensor zeros(Shape shape) { return Tensor(shape); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }

    std::size_t index(int n, int c, int y, int x) const noexcept {
        assert(n < shape_.n && c < shape_.c && y < shape_.h && x < shape_.w);
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }
    T& operator()(int n, int c, int y, int x) noexcept { return data_[index(n, c, y, x)]; }
    T operator()(int n, int c, int y, int x) const noexcept { return data_[index(n, c, y, x)]; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    T operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Pointer to the (n, c) plane.
    T* plane(int n, int c) noexcept { return data_.data() + index(n, c, 0, 0); }
    const T* plane(int n, int c) const noexcept { return data_.data() + index(n, c, 0, 0); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(Shape shape) const {
        if (shape.size() != data_.size()) {
            throw InvalidShape("cannot reshape " + shape_.str() + " to " + shape.str());
        }
        Tensor out = *this;
        out.shape_ = shape;
        return out;
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    Tensor& operator+=(const Tensor& other) {
        require_same_shape(other, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
        return *this;
    }

    Tensor& operator*=(T s) {
        for (auto& v : data_) v *= s;
        return *this;
    }

    void require_same_shape(const Tensor& other, const char* what) const {
        if (shape_ != other.shape_) {
            throw InvalidShape(std::string(what) + ": shape mismatch " + shape_.str() + " vs " +
                               other.shape_.str());
        }
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    static std::size_t checked_size(const Shape& s) {
        if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
            throw InvalidShape("negative dimension in shape " + s.str());
        }
        return s.size();
    }

    Shape shape_{};
    AlignedVector<T> data_;
};

template <typename T>
T squared_norm(const Tensor<T>& t) {
    T acc{0};
    for (T v : t.values()) acc += v * v;
    return acc;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    a.require_same_shape(b, "max_abs_diff");
    T m{0};
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// Copy of images [begin, begin + count) along the batch axis.
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& t, int begin, int count) {
    const Shape s = t.shape();
    if (begin < 0 || count < 0 || begin + count > s.n) throw InvalidShape("batch slice out of range");
    Tensor<T> out({count, s.c, s.h, s.w});
    const std::size_t per = static_cast<std::size_t>(s.c) * s.plane();
    std::copy_n(t.data() + begin * per, count * per, out.data());
    return out;
}

/// Stack same-shaped tensors along the batch axis.
template <typename T>
Tensor<T> concat_batch(std::span<const Tensor<T>> parts) {
    if (parts.empty()) return {};
    Shape s = parts.front().shape();
    int total = 0;
    for (const auto& p : parts) {
        const Shape q = p.shape();
        if (q.c != s.c || q.h != s.h || q.w != s.w) {
            throw InvalidShape("concat_batch: " + q.str() + " vs " + s.str());
        }
        total += q.n;
    }
    s.n = total;
    Tensor<T> out(s);
    T* dst = out.data();
    for (const auto& p : parts) dst = std::copy(p.data(), p.data() + p.size(), dst);
    return out;
}

}  // namespace spdnet
