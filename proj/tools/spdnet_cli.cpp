#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <unistd.h>
#include <vector>

#include <CLI11.hpp>

#include "spdnet/spdnet.hpp"

namespace fs = std::filesystem;
using namespace spdnet;

namespace {

enum ExitCode { kOk = 0, kInternal = 1, kUsage = 2, kData = 3 };

/// Bad arguments or unreadable files.
class UsageError : public Error {
public:
    using Error::Error;
};

fs::path normalized(const fs::path& p) {
    fs::path out = fs::absolute(p).lexically_normal();
    if (out.filename().empty()) out = out.parent_path();
    return out;
}

void require_file(const fs::path& p, const std::string& what) {
    if (!fs::is_regular_file(p)) throw UsageError(what + " not found: " + p.string());
}

void require_dir(const fs::path& p, const std::string& what) {
    if (!fs::is_directory(p)) throw UsageError(what + " is not a directory: " + p.string());
}

/// Collects outputs in a hidden sibling directory and moves them into place
/// only on commit(), so a failed run leaves the target untouched.
class StagedDir {
public:
    explicit StagedDir(const fs::path& target) : target_(normalized(target)) {
        stage_ = target_.parent_path() / ("." + target_.filename().string() + ".partial-" + std::to_string(::getpid()));
        if (fs::exists(target_) && !fs::is_directory(target_)) {
            throw UsageError("output exists and is not a directory: " + target_.string());
        }
        fs::remove_all(stage_);
        fs::create_directories(stage_);
    }
    StagedDir(const StagedDir&) = delete;
    StagedDir& operator=(const StagedDir&) = delete;
    ~StagedDir() {
        std::error_code ec;
        fs::remove_all(stage_, ec);
    }

    const fs::path& path() const { return stage_; }

    void commit() {
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(stage_)) {
            if (e.is_regular_file()) files.push_back(fs::relative(e.path(), stage_));
        }
        fs::create_directories(target_);
        for (const auto& rel : files) {
            fs::create_directories((target_ / rel).parent_path());
            fs::rename(stage_ / rel, target_ / rel);
        }
    }

private:
    fs::path target_;
    fs::path stage_;
};

/// Single output file written next to its target and renamed at the end.
template <typename Writer>
void write_atomically(const fs::path& target, Writer&& write) {
    const fs::path dst = normalized(target);
    if (!dst.parent_path().empty()) fs::create_directories(dst.parent_path());
    const fs::path tmp = dst.parent_path() / ("." + dst.stem().string() + ".partial" + dst.extension().string());
    try {
        write(tmp);
        fs::rename(tmp, dst);
    } catch (...) {
        std::error_code ec;
        fs::remove(tmp, ec);
        throw;
    }
}

std::vector<fs::path> list_images(const fs::path& input) {
    if (fs::is_regular_file(input)) return {input};
    require_dir(input, "input");
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(input)) {
        if (e.is_regular_file() && image::has_image_extension(e.path())) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) throw UsageError("no .png/.jpg images in " + input.string());
    return out;
}

/// Decodes every file first so that a bad input aborts before anything is written.
std::vector<Tensor<float>> read_all(const std::vector<fs::path>& files) {
    std::vector<Tensor<float>> out;
    std::vector<std::string> bad;
    for (const auto& f : files) {
        try {
            out.push_back(image::read_rgb(f));
        } catch (const DecodeError&) {
            bad.push_back(f.string());
        }
    }
    if (!bad.empty()) {
        std::string msg = "cannot decode " + std::to_string(bad.size()) + " file(s):";
        for (const auto& b : bad) msg += "\n  " + b;
        throw DecodeError(msg);
    }
    return out;
}

Checkpoint open_checkpoint(const fs::path& p) {
    require_file(p, "weights");
    try {
        return load_checkpoint(p);
    } catch (const CheckpointIncompatible&) {
        throw;
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
    std::string config, input, output, weights;
    std::optional<std::uint64_t> seed;
};

void cmd_train(const TrainArgs& a) {
    RunConfig run;
    if (!a.config.empty()) {
        require_file(a.config, "config");
        run = load_run_config(a.config);
    }
    if (a.seed) run.train.seed = *a.seed;
    require_dir(a.input, "dataset");
    auto data = load_pairs(a.input);
    std::printf("dataset: %zu pairs from %s\n", data.size(), a.input.c_str());

    std::optional<Trainer> trainer;
    if (!a.weights.empty()) {
        const Checkpoint ck = open_checkpoint(a.weights);
        std::optional<TrainConfig> override_cfg;
        if (!a.config.empty() || a.seed) {
            TrainConfig t = a.config.empty() ? train_config_from_json(ck.train_config) : run.train;
            if (a.seed) t.seed = *a.seed;
            override_cfg = t;
        }
        trainer.emplace(ck, std::move(data), override_cfg);
        std::printf("resuming from %s at step %ld\n", a.weights.c_str(), trainer->steps_done());
    } else {
        trainer.emplace(run.model, run.train, std::move(data));
    }
    const auto& m = trainer->model().config();
    std::printf("model: %zu parameters, %d stages, width %d\n", trainer->model().num_parameters(), m.num_wmlm,
                m.base_channels);

    StagedDir out(a.output);
    trainer->open_log(out.path() / "train_log.csv");
    trainer->run(out.path(), [](long step, const metrics::MetricReport& r) {
        std::printf("step %ld: train PSNR %.4f dB, SSIM %.4f\n", step, r.mean_psnr, r.mean_ssim);
        std::fflush(stdout);
    });
    const auto& losses = trainer->losses();
    if (!losses.empty()) std::printf("steps %ld, final loss %.6g\n", trainer->steps_done(), losses.back());
    out.commit();
    std::printf("wrote %s\n", (normalized(a.output) / "final.ckpt").c_str());
}

// ---- infer ----------------------------------------------------------------

struct InferArgs {
    std::string weights, input, output;
    bool save_stages = false;
};

void cmd_infer(const InferArgs& a) {
    const Checkpoint ck = open_checkpoint(a.weights);
    if (!fs::exists(a.input)) throw UsageError("input not found: " + a.input);
    const auto files = list_images(a.input);
    const auto images = read_all(files);
    const auto model = model_from_checkpoint<float>(ck);
    const int m = model.config().size_multiple();

    StagedDir out(a.output);
    for (std::size_t i = 0; i < files.size(); ++i) {
        const std::string stem = files[i].stem().string();
        const auto [padded, crop] = pad_to_multiple(images[i], m);
        const auto stages = model.predict_stages(padded);
        image::write_rgb(out.path() / (stem + ".png"), unpad(stages.back(), crop));
        if (a.save_stages) {
            for (std::size_t s = 0; s + 1 < stages.size(); ++s) {
                image::write_rgb(out.path() / (stem + "_stage" + std::to_string(s + 1) + ".png"),
                                 unpad(stages[s], crop));
            }
        }
        std::printf("%s -> %s.png\n", files[i].filename().c_str(), stem.c_str());
    }
    out.commit();
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
    std::string pred_dir, gt_dir, report;
};

void cmd_eval(const EvalArgs& a) {
    require_dir(a.pred_dir, "prediction directory");
    require_dir(a.gt_dir, "ground-truth directory");
    const auto preds = detail::images_by_stem(a.pred_dir);
    const auto gts = detail::images_by_stem(a.gt_dir);
    std::vector<std::string> unmatched;
    for (const auto& [k, p] : gts) {
        if (!preds.count(k)) unmatched.push_back(k + " (no prediction)");
    }
    std::size_t extra = 0;
    for (const auto& [k, p] : preds) extra += gts.count(k) == 0;
    if (extra > 0) std::fprintf(stderr, "note: ignoring %zu prediction(s) without ground truth\n", extra);
    if (!unmatched.empty()) {
        std::string msg = "unmatched keys:";
        for (const auto& u : unmatched) msg += " " + u;
        throw DatasetIntegrity(msg);
    }
    if (gts.empty()) throw UsageError("no images in " + a.gt_dir);

    metrics::MetricReport report;
    for (const auto& [k, gt_path] : gts) {
        const auto pred = image::read_rgb(preds.at(k));
        const auto gt = image::read_rgb(gt_path);
        if (pred.shape() != gt.shape()) {
            throw DatasetIntegrity("size mismatch for key " + k + ": " + pred.shape().str() + " vs " + gt.shape().str());
        }
        report.add(metrics::compare_rgb(pred, gt, k));
    }
    report.finalize();
    for (const auto& r : report.per_image) std::printf("%s\tpsnr %.4f\tssim %.6f\n", r.key.c_str(), r.psnr, r.ssim);
    std::printf("mean\tpsnr %.4f\tssim %.6f\t(%zu images, Y channel)\n", report.mean_psnr, report.mean_ssim,
                report.per_image.size());
    if (!a.report.empty()) {
        write_atomically(a.report, [&](const fs::path& tmp) {
            std::ofstream f(tmp);
            f << metrics::to_json(report).dump(2) << "\n";
            if (!f.flush()) throw Error("cannot write " + tmp.string());
        });
    }
}

// ---- rcp ------------------------------------------------------------------

struct RcpArgs {
    std::string input, output;
};

void cmd_rcp(const RcpArgs& a) {
    require_file(a.input, "input");
    if (!image::has_image_extension(a.output)) throw UsageError("output must end in .png or .jpg: " + a.output);
    const auto residue = rcp::residue_channel(image::read_rgb(a.input));
    write_atomically(a.output, [&](const fs::path& tmp) { image::write_gray(tmp, residue); });
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
    std::string clean_dir, out_dir, params;
    std::optional<std::uint64_t> seed;
    int count = 1;
};

void cmd_synth(const SynthArgs& a) {
    SynthRainParams params;
    if (!a.params.empty()) {
        require_file(a.params, "params");
        params = load_synth_params(a.params);
    }
    const std::uint64_t seed = a.seed ? *a.seed : params.seed;
    if (a.count < 1) throw UsageError("--count must be >= 1");
    const auto files = list_images(a.clean_dir);
    const auto cleans = read_all(files);

    StagedDir out(a.out_dir);
    std::vector<RainPair> pairs;
    for (std::size_t j = 0; j < files.size(); ++j) {
        for (int i = 0; i < a.count; ++i) {
            char key[512];
            std::snprintf(key, sizeof key, "%s_%04d", files[j].stem().c_str(), i);
            Rng rng = Rng::derive(seed, j, static_cast<std::uint64_t>(i));
            pairs.push_back(synth_rain(cleans[j], params, rng, key));
        }
    }
    save_pairs(out.path(), pairs);
    out.commit();
    std::printf("wrote %zu pairs to %s\n", pairs.size(), a.out_dir.c_str());
}

// ---- info -----------------------------------------------------------------

struct InfoArgs {
    std::string weights, config;
};

void cmd_info(const InfoArgs& a) {
    ModelConfig cfg;
    std::optional<TrainState> state;
    if (!a.weights.empty()) {
        const Checkpoint ck = open_checkpoint(a.weights);
        cfg = ck.model;
        state = ck.state;
    } else if (!a.config.empty()) {
        require_file(a.config, "config");
        const RunConfig run = load_run_config(a.config);
        cfg = run.train.apply(run.model);
    }
    cfg.validate();
    const SPDNet<float> model(cfg);
    std::printf("param_count: %zu\n", model.num_parameters());
    std::printf("stages: %d\n", cfg.num_wmlm);
    std::printf("channels: %d\n", cfg.base_channels);
    std::printf("levels_per_wmlm: %d\n", cfg.levels_per_wmlm);
    std::printf("se_reduction: %d\n", cfg.se_reduction);
    std::printf("use_ifm: %s, use_ensemble: %s, rcp_update: %s\n", cfg.use_ifm ? "true" : "false",
                cfg.use_ensemble ? "true" : "false", cfg.rcp_update ? "true" : "false");
    if (state) std::printf("trained_steps: %ld\n", state->step);
    std::printf("modules:\n");
    for (const auto& [name, n] : parameter_breakdown(model)) std::printf("  %-16s %zu\n", name.c_str(), n);
}

int run_guarded(const std::function<void()>& action) {
    try {
        action();
        return kOk;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsage;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kUsage;
    } catch (const CheckpointIncompatible& e) {
        std::fprintf(stderr, "incompatible checkpoint: %s\n", e.what());
        return kUsage;
    } catch (const NonFiniteLoss& e) {
        std::fprintf(stderr, "training diverged: %s\n", e.what());
        return kData;
    } catch (const DecodeError& e) {
        std::fprintf(stderr, "decode error: %s\n", e.what());
        return kData;
    } catch (const DatasetIntegrity& e) {
        std::fprintf(stderr, "dataset error: %s\n", e.what());
        return kData;
    } catch (const InvalidShape& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kData;
    } catch (const InvalidInput& e) {
        std::fprintf(stderr, "invalid input: %s\n", e.what());
        return kUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return kInternal;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Single-image deraining with residue-channel-prior guidance"};
    app.require_subcommand(1);
    std::function<void()> action;

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Train on a rainy/ + gt/ dataset directory");
    t->add_option("--input", train.input, "Dataset root containing rainy/ and gt/")->required();
    t->add_option("--output", train.output, "Directory for checkpoints and train_log.csv")->required();
    t->add_option("--config", train.config, "YAML run config");
    t->add_option("--seed", train.seed, "Overrides train.seed");
    t->add_option("--weights", train.weights, "Checkpoint to resume from");
    t->callback([&] { action = [&] { cmd_train(train); }; });

    InferArgs infer;
    auto* i = app.add_subcommand("infer", "Derain an image or a directory of images");
    i->add_option("--weights", infer.weights, "Checkpoint")->required();
    i->add_option("--input", infer.input, "Image file or directory")->required();
    i->add_option("--output", infer.output, "Output directory")->required();
    i->add_flag("--save-stages", infer.save_stages, "Also write intermediate stage outputs");
    i->callback([&] { action = [&] { cmd_infer(infer); }; });

    EvalArgs eval;
    auto* e = app.add_subcommand("eval", "Y-channel PSNR/SSIM of predictions against ground truth");
    e->add_option("--pred-dir", eval.pred_dir, "Predictions")->required();
    e->add_option("--gt-dir", eval.gt_dir, "Ground truth, matched by file stem")->required();
    e->add_option("--report", eval.report, "Write a JSON report");
    e->callback([&] { action = [&] { cmd_eval(eval); }; });

    RcpArgs rcp_args;
    auto* r = app.add_subcommand("rcp", "Write the residue channel of an image as 8-bit grayscale");
    r->add_option("--input", rcp_args.input, "RGB image")->required();
    r->add_option("--output", rcp_args.output, "Output image (.png)")->required();
    r->callback([&] { action = [&] { cmd_rcp(rcp_args); }; });

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Add synthetic rain to clean images");
    s->add_option("--clean-dir", synth.clean_dir, "Directory of clean images")->required();
    s->add_option("--out-dir", synth.out_dir, "Output dataset root (rainy/, gt/)")->required();
    s->add_option("--seed", synth.seed, "Random seed");
    s->add_option("--count", synth.count, "Rainy variants per clean image")->capture_default_str();
    s->add_option("--params", synth.params, "YAML streak parameters");
    s->callback([&] { action = [&] { cmd_synth(synth); }; });

    InfoArgs info;
    auto* n = app.add_subcommand("info", "Print parameter counts for a config or checkpoint");
    auto* w_opt = n->add_option("--weights", info.weights, "Checkpoint");
    auto* c_opt = n->add_option("--config", info.config, "YAML run config");
    w_opt->excludes(c_opt);
    n->callback([&] { action = [&] { cmd_info(info); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err) == 0 ? kOk : kUsage;
    }
    return run_guarded(action);
}
