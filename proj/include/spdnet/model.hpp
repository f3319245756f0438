#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "spdnet/blocks.hpp"

namespace spdnet {

/// Architectural hyperparameters. The defaults are the full three-stage
/// network. Width 60 with SE reduction 12 was calibrated once so the default
/// network has 3.16M parameters (a width divisible by 16 gives either 2.02M or
/// 3.59M).
struct ModelConfig {
    int base_channels = 60;
    int num_wmlm = 3;
    int levels_per_wmlm = 3;
    int srir_per_level = 1;
    int rem_srir_depth = 1;
    int se_reduction = 12;
    int blocks_per_srir = 3;

    // Ablation switches.
    bool use_ifm = true;       // false: plain concat of image and prior features
    bool use_ensemble = true;  // false: stage n reads only the previous stage's feature
    bool rcp_update = true;    // false: every stage is guided by the prior of the rainy input

    BlockConfig block() const { return {base_channels, se_reduction, blocks_per_srir, 3}; }

    /// Spatial dims must be divisible by this.
    int size_multiple() const { return 1 << (levels_per_wmlm - 1); }

    void validate() const {
        if (num_wmlm < 1) throw InvalidInput("ModelConfig: num_wmlm must be >= 1");
        if (levels_per_wmlm < 1 || levels_per_wmlm > 16) {
            throw InvalidInput("ModelConfig: levels_per_wmlm must be in [1, 16]");
        }
        if (srir_per_level < 1 || rem_srir_depth < 1) {
            throw InvalidInput("ModelConfig: srir_per_level and rem_srir_depth must be >= 1");
        }
        block().validate();
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Per-stage predictions B_1..B_n and features F_1..F_n, plus the priors
/// P_1..P_n that guided each stage.
template <typename T>
struct StageOutputs {
    std::vector<Var<T>> images;
    std::vector<Var<T>> features;
    std::vector<Var<T>> priors;

    const Var<T>& final_image() const { return images.back(); }
};

/// Residue-channel-prior feature extractor: SRiR(conv3x3(P)), 1 -> C channels.
template <typename T>
class RcpExtractor {
public:
    RcpExtractor() = default;
    RcpExtractor(const ModelConfig& cfg, Rng& rng) : conv_in_(1, cfg.base_channels, 3, rng) {
        for (int i = 0; i < cfg.rem_srir_depth; ++i) srirs_.emplace_back(cfg.block(), rng);
    }

    Var<T> operator()(const Var<T>& prior) const {
        if (prior.shape().c != 1) throw InvalidShape("RcpExtractor: prior must have 1 channel");
        Var<T> h = conv_in_(prior);
        for (const auto& s : srirs_) h = s(h);
        return h;
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        conv_in_.collect(join_name(prefix, "conv_in"), out);
        for (std::size_t i = 0; i < srirs_.size(); ++i) {
            srirs_[i].collect(join_name(prefix, "srir" + std::to_string(i)), out);
        }
    }

private:
    Conv2d<T> conv_in_;
    std::vector<SRiR<T>> srirs_;
};

/// Interactive fusion of image features F_o and prior features F_p:
///   S = sigmoid(conv(F_o) * conv(F_p))
///   out = concat(F_o + S * F_o, F_p + S * F_p)
template <typename T>
class InteractiveFusion {
public:
    InteractiveFusion() = default;
    InteractiveFusion(int channels, Rng& rng) : map_image_(channels, channels, 3, rng), map_prior_(channels, channels, 3, rng) {}

    Var<T> similarity(const Var<T>& image_feat, const Var<T>& prior_feat) const {
        return ops::sigmoid(ops::mul(map_image_(image_feat), map_prior_(prior_feat)));
    }

    Var<T> operator()(const Var<T>& image_feat, const Var<T>& prior_feat) const {
        if (image_feat.shape() != prior_feat.shape()) {
            throw InvalidShape("InteractiveFusion: " + image_feat.shape().str() + " vs " +
                               prior_feat.shape().str());
        }
        const Var<T> s = similarity(image_feat, prior_feat);
        const Var<T> image_out = ops::add(image_feat, ops::mul(s, image_feat));
        const Var<T> prior_out = ops::add(prior_feat, ops::mul(s, prior_feat));
        return ops::concat_channels<T>({image_out, prior_out});
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        map_image_.collect(join_name(prefix, "map_image"), out);
        map_prior_.collect(join_name(prefix, "map_prior"), out);
    }

private:
    Conv2d<T> map_image_;
    Conv2d<T> map_prior_;
};

/// Wavelet multi-level module. Level i > 0 is conv1x1(dwt2(level i-1))
/// (4C -> C); each level runs through SRiR; coarse levels are merged back
/// with iwt2(conv1x1(.)) (C -> 4C) plus addition, coarsest first.
template <typename T>
class WaveletMultiLevel {
public:
    WaveletMultiLevel() = default;
    WaveletMultiLevel(const ModelConfig& cfg, Rng& rng) : levels_(cfg.levels_per_wmlm) {
        const int c = cfg.base_channels;
        for (int i = 1; i < levels_; ++i) down_.emplace_back(4 * c, c, 1, rng);
        srirs_.resize(levels_);
        for (int i = 0; i < levels_; ++i) {
            for (int k = 0; k < cfg.srir_per_level; ++k) srirs_[i].emplace_back(cfg.block(), rng);
        }
        for (int i = 1; i < levels_; ++i) up_.emplace_back(c, 4 * c, 1, rng);
    }

    Var<T> operator()(const Var<T>& x) const {
        const int m = 1 << (levels_ - 1);
        if (x.shape().h % m != 0 || x.shape().w % m != 0) {
            throw InvalidShape("WaveletMultiLevel: spatial size " + std::to_string(x.shape().h) + "x" +
                               std::to_string(x.shape().w) + " not divisible by " + std::to_string(m));
        }
        std::vector<Var<T>> feats{x};
        for (int i = 1; i < levels_; ++i) feats.push_back(down_[i - 1](ops::dwt2(feats.back())));
        for (int i = 0; i < levels_; ++i) {
            for (const auto& s : srirs_[i]) feats[i] = s(feats[i]);
        }
        for (int i = levels_ - 1; i >= 1; --i) {
            feats[i - 1] = ops::add(ops::iwt2(up_[i - 1](feats[i])), feats[i - 1]);
        }
        return feats[0];
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        for (int i = 1; i < levels_; ++i) down_[i - 1].collect(join_name(prefix, "down" + std::to_string(i)), out);
        for (int i = 0; i < levels_; ++i) {
            for (std::size_t k = 0; k < srirs_[i].size(); ++k) {
                srirs_[i][k].collect(join_name(prefix, "level" + std::to_string(i) + ".srir" + std::to_string(k)), out);
            }
        }
        for (int i = 1; i < levels_; ++i) up_[i - 1].collect(join_name(prefix, "up" + std::to_string(i)), out);
    }

private:
    int levels_ = 1;
    std::vector<Conv2d<T>> down_;
    std::vector<std::vector<SRiR<T>>> srirs_;
    std::vector<Conv2d<T>> up_;
};

/// One guided stage: prior features, fusion with the stage input, WMLM
/// backbone and an RGB output head.
template <typename T>
class Stage {
public:
    Stage() = default;
    Stage(const ModelConfig& cfg, int index, Rng& rng) : use_ifm_(cfg.use_ifm) {
        const int c = cfg.base_channels;
        if (index > 0 && cfg.use_ensemble) ensemble_ = Conv2d<T>(index * c, c, 1, rng);
        rem_ = RcpExtractor<T>(cfg, rng);
        if (use_ifm_) ifm_ = InteractiveFusion<T>(c, rng);
        fuse_ = Conv2d<T>(2 * c, c, 1, rng);
        wmlm_ = WaveletMultiLevel<T>(cfg, rng);
        output_ = Conv2d<T>(c, 3, 3, rng);
    }

    bool has_ensemble() const { return ensemble_.out_channels() > 0; }
    const Conv2d<T>& ensemble() const { return ensemble_; }
    const Conv2d<T>& output() const { return output_; }

    /// Returns (F_n, B_n).
    std::pair<Var<T>, Var<T>> operator()(const Var<T>& stage_input, const Var<T>& prior) const {
        const Var<T> prior_feat = rem_(prior);
        const Var<T> fused = use_ifm_ ? ifm_(stage_input, prior_feat)
                                      : ops::concat_channels<T>({stage_input, prior_feat});
        Var<T> feat = wmlm_(fuse_(fused));
        Var<T> image = output_(feat);
        return {std::move(feat), std::move(image)};
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        if (has_ensemble()) ensemble_.collect(join_name(prefix, "ensemble"), out);
        rem_.collect(join_name(prefix, "rem"), out);
        if (use_ifm_) ifm_.collect(join_name(prefix, "ifm"), out);
        fuse_.collect(join_name(prefix, "fuse"), out);
        wmlm_.collect(join_name(prefix, "wmlm"), out);
        output_.collect(join_name(prefix, "output"), out);
    }

private:
    bool use_ifm_ = true;
    Conv2d<T> ensemble_;
    RcpExtractor<T> rem_;
    InteractiveFusion<T> ifm_;
    Conv2d<T> fuse_;
    WaveletMultiLevel<T> wmlm_;
    Conv2d<T> output_;
};

/// Multi-stage deraining network with iterative residue-channel guidance.
template <typename T>
class SPDNet {
public:
    explicit SPDNet(const ModelConfig& cfg, std::uint64_t seed = 0) : config_(cfg) {
        cfg.validate();
        Rng rng(seed);
        shallow_ = Conv2d<T>(3, cfg.base_channels, 3, rng);
        for (int n = 0; n < cfg.num_wmlm; ++n) stages_.emplace_back(cfg, n, rng);
        shallow_.collect("shallow", params_);
        for (int n = 0; n < cfg.num_wmlm; ++n) stages_[n].collect("stage" + std::to_string(n + 1), params_);
    }

    const ModelConfig& config() const { return config_; }
    const ParamList<T>& parameters() const { return params_; }
    std::size_t num_parameters() const { return count_parameters(params_); }
    const std::vector<Stage<T>>& stages() const { return stages_; }

    StageOutputs<T> forward(const Var<T>& rainy) const {
        const Shape s = rainy.shape();
        if (s.c != 3) throw InvalidInput("SPDNet: expected an RGB input, got " + std::to_string(s.c) + " channels");
        const int m = config_.size_multiple();
        if (s.h % m != 0 || s.w % m != 0 || s.h == 0 || s.w == 0) {
            throw InvalidShape("SPDNet: input " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                               " must be non-empty and divisible by " + std::to_string(m));
        }

        StageOutputs<T> out;
        const Var<T> shallow = shallow_(rainy);
        const Var<T> first_prior = ops::residue_channel(rainy);
        Var<T> prior = first_prior;
        for (int n = 0; n < config_.num_wmlm; ++n) {
            Var<T> stage_input = shallow;
            if (n > 0) {
                stage_input = config_.use_ensemble
                                  ? stages_[n].ensemble()(ops::concat_channels<T>(std::span<const Var<T>>(out.features)))
                                  : out.features.back();
            }
            auto [feat, image] = stages_[n](stage_input, prior);
            out.priors.push_back(prior);
            out.features.push_back(std::move(feat));
            out.images.push_back(std::move(image));
            if (n + 1 < config_.num_wmlm) {
                prior = config_.rcp_update ? ops::residue_channel(ops::clamp(out.images.back(), T{0}, T{1}))
                                           : first_prior;
            }
        }
        return out;
    }

    /// Final-stage prediction without recording a graph.
    Tensor<T> predict(const Tensor<T>& rainy) const {
        NoGradGuard guard;
        return forward(Var<T>(rainy)).final_image().value();
    }

    /// All stage predictions without recording a graph.
    std::vector<Tensor<T>> predict_stages(const Tensor<T>& rainy) const {
        NoGradGuard guard;
        std::vector<Tensor<T>> images;
        for (const auto& v : forward(Var<T>(rainy)).images) images.push_back(v.value());
        return images;
    }

    void zero_grad() {
        for (auto& p : params_) p.var.zero_grad();
    }

    /// Replaces all parameter values. Names and shapes must match exactly.
    template <typename U>
    void load_parameters(const std::map<std::string, Tensor<U>>& values) {
        if (values.size() != params_.size()) {
            throw CheckpointIncompatible("parameter count mismatch: checkpoint has " + std::to_string(values.size()) +
                                         " tensors, model expects " + std::to_string(params_.size()));
        }
        for (auto& p : params_) {
            auto it = values.find(p.name);
            if (it == values.end()) throw CheckpointIncompatible("checkpoint is missing parameter " + p.name);
            if (it->second.shape() != p.var.shape()) {
                throw CheckpointIncompatible("shape mismatch for " + p.name + ": " + it->second.shape().str() +
                                             " vs " + p.var.shape().str());
            }
            if constexpr (std::is_same_v<T, U>) {
                p.var.mutable_value() = it->second;
            } else {
                p.var.mutable_value() = it->second.template cast<T>();
            }
        }
    }

    std::map<std::string, Tensor<T>> state() const {
        std::map<std::string, Tensor<T>> out;
        for (const auto& p : params_) out.emplace(p.name, p.var.value());
        return out;
    }

private:
    ModelConfig config_;
    Conv2d<T> shallow_;
    std::vector<Stage<T>> stages_;
    ParamList<T> params_;
};

/// Exact number of trainable scalars of a configuration.
inline std::size_t param_count(const ModelConfig& cfg) { return SPDNet<float>(cfg).num_parameters(); }

/// Parameter totals grouped by module path ("shallow", "stage1.rem", ...).
template <typename T>
std::map<std::string, std::size_t> parameter_breakdown(const SPDNet<T>& model) {
    std::map<std::string, std::size_t> out;
    for (const auto& p : model.parameters()) {
        std::string key = p.name.substr(0, p.name.find('.'));
        if (key.rfind("stage", 0) == 0) {
            const auto second = p.name.find('.', key.size() + 1);
            key = p.name.substr(0, second);
        }
        out[key] += p.var.value().size();
    }
    return out;
}

}  // namespace spdnet
