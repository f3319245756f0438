#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "spdnet/checkpoint.hpp"
#include "spdnet/config.hpp"
#include "spdnet/data.hpp"
#include "spdnet/metrics.hpp"
#include "spdnet/model.hpp"
#include "spdnet/optim.hpp"

namespace spdnet {

/// Sum over stages of the per-stage mean squared error against `gt`.
template <typename T>
Var<T> stage_loss(const StageOutputs<T>& out, const Tensor<T>& gt) {
    if (out.images.empty()) throw InvalidInput("stage_loss: no stage outputs");
    Var<T> total;
    for (const auto& b : out.images) {
        if (b.shape() != gt.shape()) {
            throw InvalidInput("stage_loss: prediction " + b.shape().str() + " vs target " + gt.shape().str());
        }
        const Var<T> term = ops::mse(b, gt);
        total = total.node() ? ops::add(total, term) : term;
    }
    return total;
}

struct Batch {
    Tensor<float> rainy;
    Tensor<float> clean;
    std::vector<std::string> keys;

    std::string key_list() const {
        std::string s;
        for (const auto& k : keys) s += (s.empty() ? "" : ",") + k;
        return s;
    }
};

/// Batch for optimizer step `step` (0-based). Depends only on (seed, step), so
/// a resumed run sees the same batches as an uninterrupted one. Pairs are drawn
/// without replacement when the batch fits in the dataset.
inline Batch make_batch(const std::vector<RainPair>& data, const TrainConfig& cfg, long step) {
    if (data.empty()) throw InvalidInput("make_batch: empty dataset");
    Rng rng = Rng::derive(cfg.seed, static_cast<std::uint64_t>(step), 1);
    const auto n = static_cast<std::int64_t>(data.size());
    std::vector<std::int64_t> picks;
    if (cfg.batch_size <= n) {
        std::vector<std::int64_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = 0; i < cfg.batch_size; ++i) {
            std::swap(idx[i], idx[rng.uniform_int(i, n - 1)]);
            picks.push_back(idx[i]);
        }
    } else {
        for (int i = 0; i < cfg.batch_size; ++i) picks.push_back(rng.uniform_int(0, n - 1));
    }
    std::vector<Tensor<float>> rainy, clean;
    Batch b;
    for (auto i : picks) {
        auto patch = random_patch(data[i], cfg.patch_size, rng, cfg.hflip);
        rainy.push_back(std::move(patch.rainy));
        clean.push_back(std::move(patch.clean));
        b.keys.push_back(data[i].key);
    }
    b.rainy = concat_batch<float>(rainy);
    b.clean = concat_batch<float>(clean);
    return b;
}

/// Per-stage metrics on the Y channel. Each rainy image is reflect-padded to
/// the model's size multiple, predicted, unpadded and clamped to [0,1].
inline std::vector<metrics::MetricReport> evaluate_stages(const SPDNet<float>& model, const std::vector<RainPair>& data) {
    std::vector<metrics::MetricReport> reports(model.config().num_wmlm);
    for (const auto& pair : data) {
        if (pair.rainy.shape() != pair.clean.shape()) throw DatasetIntegrity("size mismatch for key " + pair.key);
        const auto [padded, crop] = pad_to_multiple(pair.rainy, model.config().size_multiple());
        const auto stages = model.predict_stages(padded);
        for (std::size_t s = 0; s < stages.size(); ++s) {
            Tensor<float> pred = unpad(stages[s], crop);
            for (auto& v : pred.values()) v = std::clamp(v, 0.0f, 1.0f);
            reports[s].add(metrics::compare_rgb(pred, pair.clean, pair.key));
        }
    }
    for (auto& r : reports) r.finalize();
    return reports;
}

/// Metrics of the final stage.
inline metrics::MetricReport evaluate(const SPDNet<float>& model, const std::vector<RainPair>& data) {
    return evaluate_stages(model, data).back();
}

inline metrics::MetricReport evaluate(const Checkpoint& ck, const std::vector<RainPair>& data) {
    const auto model = model_from_checkpoint<float>(ck);
    for (const auto& p : data) {
        if (p.rainy.shape().h < 1 || p.rainy.shape().w < 1) throw CheckpointIncompatible("empty image " + p.key);
    }
    return evaluate(model, data);
}

struct StepResult {
    long step = 0;  // 1-based index of the completed step
    double loss = 0.0;
    double grad_norm = 0.0;
};

class Trainer {
public:
    Trainer(const ModelConfig& model_cfg, const TrainConfig& cfg, std::vector<RainPair> data)
        : cfg_(cfg),
          data_(std::move(data)),
          model_(prepare(cfg.apply(model_cfg), cfg, data_), cfg.seed),
          adam_(model_.parameters(), adam_options(cfg)) {}

    /// Continues from a checkpoint. Settings come from the checkpoint unless
    /// `override_cfg` is given.
    Trainer(const Checkpoint& ck, std::vector<RainPair> data, std::optional<TrainConfig> override_cfg = std::nullopt)
        : cfg_(override_cfg ? *override_cfg : train_config_from_json(ck.train_config)),
          data_(std::move(data)),
          model_(prepare(ck.model, cfg_, data_), cfg_.seed),
          adam_(model_.parameters(), adam_options(cfg_)) {
        model_.load_parameters(ck.weights);
        adam_.load_state(ck.adam_m, ck.adam_v, ck.adam_step);
        step_ = ck.state.step;
    }

    /// One optimizer step; returns the loss of the batch before the update.
    StepResult step() {
        const Batch batch = make_batch(data_, cfg_, step_);
        model_.zero_grad();
        const auto out = model_.forward(Var<float>(batch.rainy));
        const Var<float> loss = stage_loss(out, batch.clean);
        const double value = loss.value()[0];
        if (!std::isfinite(value)) {
            throw NonFiniteLoss(step_ + 1, batch.key_list(),
                                "non-finite loss " + std::to_string(value) + " at step " + std::to_string(step_ + 1) +
                                    " on batch [" + batch.key_list() + "]");
        }
        backward(loss);
        const double norm = adam_.step();
        ++step_;
        losses_.push_back(value);
        if (log_) {
            const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
            char line[128];
            std::snprintf(line, sizeof line, "%ld,%.9g,%.6g,%.3f\n", step_, value, cfg_.lr, wall);
            *log_ << line << std::flush;
        }
        return {step_, value, norm};
    }

    /// Loss the next step would see, without changing any state.
    double next_loss() const {
        const Batch batch = make_batch(data_, cfg_, step_);
        NoGradGuard guard;
        return stage_loss(model_.forward(Var<float>(batch.rainy)), batch.clean).value()[0];
    }

    /// Runs to cfg.total_steps(). Periodic and final checkpoints go to
    /// `out_dir` (skipped when empty); `on_eval` is called every eval_every steps.
    void run(const std::filesystem::path& out_dir = {},
             const std::function<void(long, const metrics::MetricReport&)>& on_eval = {},
             const std::vector<RainPair>* eval_data = nullptr) {
        const long total = cfg_.total_steps(data_.size());
        while (step_ < total) {
            step();
            if (!out_dir.empty() && cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0) {
                char name[64];
                std::snprintf(name, sizeof name, "step_%07ld.ckpt", step_);
                save_checkpoint(out_dir / name, checkpoint());
            }
            if (on_eval && cfg_.eval_every > 0 && step_ % cfg_.eval_every == 0) {
                on_eval(step_, evaluate(model_, eval_data ? *eval_data : data_));
            }
        }
        if (!out_dir.empty()) save_checkpoint(out_dir / "final.ckpt", checkpoint());
    }

    /// Appends "step,loss,lr,wall_time" rows to `path`.
    void open_log(const std::filesystem::path& path) {
        const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
        log_.emplace(path, std::ios::app);
        if (!*log_) throw Error("cannot open log " + path.string());
        if (fresh) *log_ << "step,loss,lr,wall_time\n" << std::flush;
    }

    Checkpoint checkpoint() const {
        Checkpoint ck;
        ck.model = model_.config();
        ck.state.step = step_;
        ck.state.epoch = static_cast<long>(step_ * cfg_.batch_size / static_cast<long>(data_.size()));
        ck.train_config = to_json(cfg_);
        ck.weights = model_.state();
        ck.adam_m = adam_.first_moments();
        ck.adam_v = adam_.second_moments();
        ck.adam_step = adam_.steps();
        return ck;
    }

    const SPDNet<float>& model() const { return model_; }
    const TrainConfig& config() const { return cfg_; }
    long steps_done() const { return step_; }
    const std::vector<double>& losses() const { return losses_; }

private:
    static ModelConfig prepare(const ModelConfig& m, const TrainConfig& t, const std::vector<RainPair>& data) {
        m.validate();
        t.validate(m);
        if (data.empty()) throw InvalidInput("Trainer: dataset is empty");
        return m;
    }

    static AdamOptions adam_options(const TrainConfig& t) {
        AdamOptions o;
        o.lr = t.lr;
        o.clip_norm = t.grad_clip;
        return o;
    }

    TrainConfig cfg_;
    std::vector<RainPair> data_;
    SPDNet<float> model_;
    Adam<float> adam_;
    long step_ = 0;
    std::vector<double> losses_;
    std::optional<std::ofstream> log_;
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace spdnet
