#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "spdnet/ops.hpp"
#include "spdnet/random.hpp"

namespace spdnet {

/// Named handle to a trainable tensor. Names are dot-separated paths such as
/// "stage1.wmlm.level0.srir0.block2.se.fc1.weight".
template <typename T>
struct NamedParam {
    std::string name;
    Var<T> var;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

inline std::string join_name(const std::string& prefix, const std::string& leaf) {
    return prefix.empty() ? leaf : prefix + "." + leaf;
}

struct BlockConfig {
    int channels = 32;
    int se_reduction = 16;
    int blocks_per_srir = 3;
    int kernel_size = 3;

    void validate() const {
        if (channels <= 0 || se_reduction <= 0 || blocks_per_srir <= 0) {
            throw InvalidInput("BlockConfig: channels, se_reduction and blocks_per_srir must be positive");
        }
        if (channels % se_reduction != 0) {
            throw InvalidInput("BlockConfig: channels (" + std::to_string(channels) +
                               ") not divisible by se_reduction (" + std::to_string(se_reduction) + ")");
        }
        if (kernel_size != 3) throw InvalidInput("BlockConfig: kernel_size must be 3");
    }
};

/// Stride-1 convolution with bias and "same" padding for odd kernels.
template <typename T>
class Conv2d {
public:
    Conv2d() = default;

    /// Weights and bias drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    Conv2d(int in_channels, int out_channels, int kernel, Rng& rng, bool zero_bias = false)
        : in_(in_channels), out_(out_channels), kernel_(kernel) {
        Tensor<T> w({out_channels, in_channels, kernel, kernel});
        Tensor<T> b({out_channels, 1, 1, 1});
        const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * kernel * kernel));
        for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-bound, bound));
        if (!zero_bias) {
            for (auto& v : b.values()) v = static_cast<T>(rng.uniform(-bound, bound));
        }
        weight_ = Var<T>(std::move(w), true);
        bias_ = Var<T>(std::move(b), true);
    }

    Var<T> operator()(const Var<T>& x) const {
        if (x.shape().c != in_) {
            throw InvalidShape("Conv2d: expected " + std::to_string(in_) + " input channels, got " +
                               std::to_string(x.shape().c));
        }
        return ops::conv2d(x, weight_, bias_, kernel_ / 2);
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({join_name(prefix, "weight"), weight_});
        out.push_back({join_name(prefix, "bias"), bias_});
    }

    int in_channels() const { return in_; }
    int out_channels() const { return out_; }
    const Var<T>& weight() const { return weight_; }
    const Var<T>& bias() const { return bias_; }

private:
    int in_ = 0;
    int out_ = 0;
    int kernel_ = 1;
    Var<T> weight_;
    Var<T> bias_;
};

/// Squeeze-and-excitation channel gate: x * sigmoid(W2 relu(W1 gap(x))).
template <typename T>
class SEGate {
public:
    SEGate() = default;
    SEGate(int channels, int reduction, Rng& rng)
        : fc1_(channels, channels / reduction, 1, rng, true), fc2_(channels / reduction, channels, 1, rng, true) {}

    /// Per-(n, c) gate values in (0, 1), shape (N, C, 1, 1).
    Var<T> gate(const Var<T>& x) const {
        return ops::sigmoid(fc2_(ops::relu(fc1_(ops::global_avg_pool(x)))));
    }

    Var<T> operator()(const Var<T>& x) const { return ops::channel_scale(x, gate(x)); }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        fc1_.collect(join_name(prefix, "fc1"), out);
        fc2_.collect(join_name(prefix, "fc2"), out);
    }

private:
    Conv2d<T> fc1_;
    Conv2d<T> fc2_;
};

/// x + se(conv(relu(conv(x)))).
template <typename T>
class SEResBlock {
public:
    SEResBlock() = default;
    SEResBlock(const BlockConfig& cfg, Rng& rng)
        : conv1_(cfg.channels, cfg.channels, cfg.kernel_size, rng),
          conv2_(cfg.channels, cfg.channels, cfg.kernel_size, rng),
          se_(cfg.channels, cfg.se_reduction, rng) {}

    Var<T> operator()(const Var<T>& x) const { return ops::add(x, se_(conv2_(ops::relu(conv1_(x))))); }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        conv1_.collect(join_name(prefix, "conv1"), out);
        conv2_.collect(join_name(prefix, "conv2"), out);
        se_.collect(join_name(prefix, "se"), out);
    }

private:
    Conv2d<T> conv1_;
    Conv2d<T> conv2_;
    SEGate<T> se_;
};

/// SE-ResBlocks in a residual: x + tail(block_g(...block_1(x))).
template <typename T>
class SRiR {
public:
    SRiR() = default;
    SRiR(const BlockConfig& cfg, Rng& rng) {
        cfg.validate();
        blocks_.reserve(cfg.blocks_per_srir);
        for (int i = 0; i < cfg.blocks_per_srir; ++i) blocks_.emplace_back(cfg, rng);
        tail_ = Conv2d<T>(cfg.channels, cfg.channels, cfg.kernel_size, rng);
    }

    Var<T> operator()(const Var<T>& x) const {
        Var<T> h = x;
        for (const auto& block : blocks_) h = block(h);
        return ops::add(x, tail_(h));
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            blocks_[i].collect(join_name(prefix, "block" + std::to_string(i)), out);
        }
        tail_.collect(join_name(prefix, "tail"), out);
    }

private:
    std::vector<SEResBlock<T>> blocks_;
    Conv2d<T> tail_;
};

/// Sets every parameter to zero (weights and biases).
template <typename T>
void zero_parameters(const ParamList<T>& params) {
    for (const auto& p : params) {
        Var<T> v = p.var;
        v.mutable_value().fill(T{0});
    }
}

template <typename T>
std::size_t count_parameters(const ParamList<T>& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.var.value().size();
    return n;
}

}  // namespace spdnet
