#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace spdnet {

/// 64-bit Mersenne Twister with distribution helpers that do not depend on
/// the standard library's (implementation-defined) distribution classes, so
/// seeded streams are identical across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    /// Independent stream for (seed, a, b), e.g. (seed, step) or (seed, worker).
    static Rng derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
        std::uint64_t h = seed;
        for (std::uint64_t v : {a, b}) {
            h ^= splitmix(v + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2));
        }
        return Rng(splitmix(h));
    }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] (inclusive).
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        if (span == 0) return static_cast<std::int64_t>(engine_());
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % span);
        std::uint64_t r;
        do {
            r = engine_();
        } while (r >= limit);
        return lo + static_cast<std::int64_t>(r % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

private:
    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    }

    std::mt19937_64 engine_;
};

}  // namespace spdnet
