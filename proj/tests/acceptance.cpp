// Prints one PASS/FAIL line per acceptance criterion; exits non-zero if any fail.

#include <chrono>
#include <cstdio>
#include <functional>
#include <regex>
#include <string>

#include "cli_runner.hpp"
#include "gradcheck.hpp"
#include "param_enum.hpp"
#include "spdnet/spdnet.hpp"

using namespace spdnet;
namespace fs = std::filesystem;
using spdnet::testing::check_gradients;
using spdnet::testing::random_tensor;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

template <typename M>
ParamList<double> params_of(const M& m) {
    ParamList<double> out;
    m.collect("", out);
    return out;
}

template <typename T, typename M>
ParamList<T> params_of_t(const M& m) {
    ParamList<T> out;
    m.collect("", out);
    return out;
}

fs::path scratch_dir() {
    const auto dir = fs::temp_directory_path() / "spdnet_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// 1 ------------------------------------------------------------------------
Outcome wavelet_round_trip() {
    Rng rng(2024);
    double worst_err = 0.0, worst_energy = 0.0;
    for (int i = 0; i < 200; ++i) {
        const Shape s{static_cast<int>(rng.uniform_int(1, 2)), static_cast<int>(rng.uniform_int(1, 4)),
                      2 * static_cast<int>(rng.uniform_int(1, 24)), 2 * static_cast<int>(rng.uniform_int(1, 24))};
        Tensor<float> x(s);
        for (auto& v : x.values()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        const auto y = wavelet::dwt2(x);
        const auto back = wavelet::iwt2(y);
        for (std::size_t k = 0; k < x.size(); ++k) worst_err = std::max(worst_err, double(std::abs(back[k] - x[k])));
        double ex = 0.0, ey = 0.0;
        for (float v : x.values()) ex += double(v) * v;
        for (float v : y.values()) ey += double(v) * v;
        worst_energy = std::max(worst_energy, std::abs(ey - ex) / ex);
    }
    return {worst_err <= 1e-5 && worst_energy <= 1e-4,
            fmt("200 float32 arrays, max |iwt2(dwt2(x)) - x| = %.3g (<= 1e-5), max energy rel. diff = %.3g (<= 1e-4)",
                worst_err, worst_energy)};
}

// 2 ------------------------------------------------------------------------
Outcome rcp_invariance() {
    double worst = 0.0;
    long changed = 0, clipped = 0, chromatic = 0;
    for (int i = 0; i < 100; ++i) {
        Rng rng = Rng::derive(77, i, 0);
        const int h = static_cast<int>(rng.uniform_int(16, 64));
        const int w = static_cast<int>(rng.uniform_int(16, 64));
        Tensor<float> clean({1, 3, h, w});
        for (auto& v : clean.values()) v = static_cast<float>(rng.uniform(0.0, 0.5));
        SynthRainParams params;  // intensity <= 0.5, so clean + streaks < 1
        Rng rain_rng = Rng::derive(77, i, 1);
        const auto pair = synth_rain(clean, params, rain_rng);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const float d0 = pair.rainy(0, 0, y, x) - clean(0, 0, y, x);
                const float d1 = pair.rainy(0, 1, y, x) - clean(0, 1, y, x);
                const float d2 = pair.rainy(0, 2, y, x) - clean(0, 2, y, x);
                changed += d0 != 0.0f;
                for (int c = 0; c < 3; ++c) clipped += pair.rainy(0, c, y, x) >= 1.0f;
                chromatic += std::max({d0, d1, d2}) - std::min({d0, d1, d2}) > 1e-6f;
            }
        }
        const auto a = rcp::residue_channel(pair.rainy);
        const auto b = rcp::residue_channel(clean);
        for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, double(std::abs(a[k] - b[k])));
    }
    const bool valid = changed > 0 && clipped == 0 && chromatic == 0;
    return {valid && worst <= 1e-7,
            fmt("100 float32 images, %ld rain pixels, %ld clipped, max |P(rainy) - P(clean)| = %.3g (<= 1e-7)", changed,
                clipped, worst)};
}

// 3 ------------------------------------------------------------------------
Outcome gradient_checks() {
    using VarList = std::vector<std::pair<std::string, Var<double>>>;
    std::string detail;
    bool ok = true;
    const auto record = [&](const std::string& name, const std::function<Var<double>()>& loss, VarList vars) {
        double worst = 0.0;
        for (const auto& r : check_gradients(loss, std::move(vars))) worst = std::max(worst, r.rel_error);
        ok = ok && worst <= 1e-3;
        detail += fmt("%s%s %.2g", detail.empty() ? "" : ", ", name.c_str(), worst);
    };

    const BlockConfig bc{4, 2, 2, 3};
    {
        Rng rng(1);
        SEResBlock<double> block(bc, rng);
        Var<double> x(random_tensor({1, 4, 6, 6}, 1), true);
        const auto w = random_tensor({1, 4, 6, 6}, 2);
        VarList vars{{"x", x}};
        for (const auto& p : params_of(block)) vars.emplace_back(p.name, p.var);
        record("se_resblock", [&] { return ops::weighted_sum(block(x), w); }, vars);
    }
    {
        Rng rng(2);
        SRiR<double> srir(bc, rng);
        Var<double> x(random_tensor({1, 4, 6, 6}, 3), true);
        const auto w = random_tensor({1, 4, 6, 6}, 4);
        VarList vars{{"x", x}};
        for (const auto& p : params_of(srir)) vars.emplace_back(p.name, p.var);
        record("srir", [&] { return ops::weighted_sum(srir(x), w); }, vars);
    }
    {
        Rng rng(3);
        InteractiveFusion<double> ifm(4, rng);
        Var<double> fo(random_tensor({1, 4, 6, 6}, 5), true);
        Var<double> fp(random_tensor({1, 4, 6, 6}, 6), true);
        const auto w = random_tensor({1, 8, 6, 6}, 7);
        VarList vars{{"F_o", fo}, {"F_p", fp}};
        for (const auto& p : params_of(ifm)) vars.emplace_back(p.name, p.var);
        record("ifm", [&] { return ops::weighted_sum(ifm(fo, fp), w); }, vars);
    }
    ModelConfig mc;
    mc.base_channels = 4;
    mc.se_reduction = 2;
    mc.blocks_per_srir = 2;
    mc.num_wmlm = 2;
    mc.levels_per_wmlm = 2;
    {
        Rng rng(4);
        WaveletMultiLevel<double> wmlm(mc, rng);
        Var<double> x(random_tensor({1, 4, 8, 8}, 8), true);
        const auto w = random_tensor({1, 4, 8, 8}, 9);
        VarList vars{{"x", x}};
        for (const auto& p : params_of(wmlm)) vars.emplace_back(p.name, p.var);
        record("wmlm", [&] { return ops::weighted_sum(wmlm(x), w); }, vars);
    }
    {
        SPDNet<double> net(mc, 5);
        Var<double> rainy(random_tensor({1, 3, 8, 8}, 10, 0.1, 0.9), true);
        const auto gt = random_tensor({1, 3, 8, 8}, 11, 0.0, 1.0);
        VarList vars{{"rainy", rainy}};
        for (const auto& p : net.parameters()) vars.emplace_back(p.name, p.var);
        record("spdnet(2 stages)",
               [&] {
                   const auto out = net.forward(rainy);
                   return ops::add(ops::mse(out.images[0], gt), ops::mse(out.images[1], gt));
               },
               vars);
    }
    return {ok, "float64 central differences, worst rel. error per module (<= 1e-3): " + detail};
}

// 4 ------------------------------------------------------------------------
template <typename T>
bool zero_identities(std::string& detail) {
    const BlockConfig bc{4, 2, 2, 3};
    Rng rng(6);
    SRiR<T> srir(bc, rng);
    zero_parameters(params_of_t<T>(srir));
    const Var<T> x(random_tensor({2, 4, 8, 8}, 12).template cast<T>());
    const bool srir_ok = srir(x).value() == x.value();

    ModelConfig mc;
    mc.base_channels = 4;
    mc.se_reduction = 2;
    mc.levels_per_wmlm = 3;
    WaveletMultiLevel<T> wmlm(mc, rng);
    zero_parameters(params_of_t<T>(wmlm));
    const bool wmlm_ok = wmlm(x).value() == x.value();

    InteractiveFusion<T> ifm(4, rng);
    zero_parameters(params_of_t<T>(ifm));
    const Var<T> fp(random_tensor({2, 4, 8, 8}, 13).template cast<T>());
    const auto out = ifm(x, fp).value();
    bool ifm_ok = out.shape() == Shape{2, 8, 8, 8};
    for (int n = 0; ifm_ok && n < 2; ++n) {
        for (int c = 0; c < 4; ++c) {
            for (int i = 0; i < 64; ++i) {
                ifm_ok = ifm_ok && out.plane(n, c)[i] == T(1.5) * x.value().plane(n, c)[i] &&
                         out.plane(n, c + 4)[i] == T(1.5) * fp.value().plane(n, c)[i];
            }
        }
    }
    detail += fmt("%s srir %s, wmlm(3 levels) %s, ifm %s; ", sizeof(T) == 4 ? "float32:" : "float64:",
                  srir_ok ? "exact" : "DIFFERS", wmlm_ok ? "exact" : "DIFFERS", ifm_ok ? "exact" : "DIFFERS");
    return srir_ok && wmlm_ok && ifm_ok;
}

Outcome zero_init_identity() {
    std::string detail;
    const bool a = zero_identities<float>(detail);
    const bool b = zero_identities<double>(detail);
    return {a && b, detail.substr(0, detail.size() - 2)};
}

// 5, 6 ---------------------------------------------------------------------
struct OverfitResult {
    double psnr_first = 0.0, psnr_final = 0.0, ssim_final = 0.0, seconds = 0.0;
    long steps = 0;
    double off_psnr = 0.0, off_loss_first = 0.0, off_loss_last = 0.0;
    bool off_ran = false;
    std::string off_error;
};

ModelConfig overfit_model() {
    ModelConfig m;
    m.base_channels = 8;
    m.se_reduction = 4;
    m.num_wmlm = 2;
    m.levels_per_wmlm = 2;
    return m;
}

TrainConfig overfit_train(long steps) {
    TrainConfig t;
    t.lr = 5e-4;
    t.batch_size = 4;
    t.patch_size = 64;
    t.max_steps = steps;
    t.seed = 1;
    t.hflip = false;
    return t;
}

OverfitResult overfit() {
    OverfitResult r;
    const auto data = synthetic_dataset(4, 64, 64, SynthRainParams{}, 7);
    const auto start = std::chrono::steady_clock::now();
    Trainer trainer(overfit_model(), overfit_train(2000), data);
    while (trainer.steps_done() < 2000) {
        trainer.step();
        if (trainer.steps_done() % 500 == 0) {
            const auto st = evaluate_stages(trainer.model(), data);
            std::printf("  [overfit] step %ld: loss %.5f, PSNR B1 %.2f dB, B_final %.2f dB\n", trainer.steps_done(),
                        trainer.losses().back(), st.front().mean_psnr, st.back().mean_psnr);
            std::fflush(stdout);
        }
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    r.steps = trainer.steps_done();
    const auto stages = evaluate_stages(trainer.model(), data);
    r.psnr_first = stages.front().mean_psnr;
    r.psnr_final = stages.back().mean_psnr;
    r.ssim_final = stages.back().mean_ssim;

    try {
        auto t = overfit_train(200);
        t.rcp_update = false;
        Trainer off(overfit_model(), t, data);
        off.run();
        r.off_loss_first = off.losses().front();
        r.off_loss_last = off.losses().back();
        if (off.model().config().rcp_update) throw Error("rcp_update override not applied");
        r.off_psnr = evaluate(off.model(), data).mean_psnr;
        r.off_ran = std::isfinite(r.off_psnr) && r.off_loss_last < r.off_loss_first;
    } catch (const std::exception& e) {
        r.off_error = e.what();
    }
    return r;
}

// 7 ------------------------------------------------------------------------
Outcome metric_exactness() {
    Tensor<double> gt({1, 1, 32, 32});
    Rng rng(5);
    for (auto& v : gt.values()) v = rng.uniform(0.0, 0.9);
    Tensor<double> pred = gt;
    for (auto& v : pred.values()) v += 0.1;
    const double p = metrics::psnr(pred, gt);

    Tensor<float> img({1, 3, 40, 36});
    for (auto& v : img.values()) v = static_cast<float>(rng.uniform());
    const auto y = metrics::luminance(img);
    const double s = metrics::ssim(y, y);

    const double lum = metrics::luminance(Tensor<double>({1, 3, 1, 1}, 1.0))[0];
    const bool ok = std::abs(p - 20.0) <= 1e-3 && s == 1.0 && std::abs(lum - 235.0 / 255.0) <= 1e-6;
    return {ok, fmt("psnr(0.1 offset) = %.6f dB, ssim(x,x) = %.17g, luminance(1,1,1) = %.9f (235/255 = %.9f)", p, s,
                    lum, 235.0 / 255.0)};
}

// 8 ------------------------------------------------------------------------
Outcome parameter_calibration(const fs::path& dir) {
    const auto parse_count = [](const std::string& out) -> long {
        std::smatch m;
        if (!std::regex_search(out, m, std::regex("param_count: (\\d+)"))) return -1;
        return std::stol(m[1]);
    };
    const auto def = spdnet::testing::run_cli("info", dir);
    const long reported = parse_count(def.out);
    const double rel = (reported - 3.04e6) / 3.04e6;

    std::ofstream(dir / "toy.yaml") << "model:\n  base_channels: 1\n  se_reduction: 1\n  blocks_per_srir: 1\n"
                                       "  num_wmlm: 1\n  levels_per_wmlm: 1\n";
    const auto toy = spdnet::testing::run_cli("info --config " + spdnet::testing::shell_quote((dir / "toy.yaml").string()), dir);
    const long toy_count = parse_count(toy.out);
    ModelConfig toy_cfg;
    toy_cfg.base_channels = 1;
    toy_cfg.se_reduction = 1;
    toy_cfg.blocks_per_srir = 1;
    toy_cfg.num_wmlm = 1;
    toy_cfg.levels_per_wmlm = 1;
    const auto hand = spdnet::testing::enumerate_parameters(toy_cfg);

    const bool ok = def.code == 0 && toy.code == 0 && std::abs(rel) <= 0.15 &&
                    reported == static_cast<long>(param_count(ModelConfig{})) && toy_count == 159 &&
                    static_cast<std::size_t>(toy_count) == hand;
    return {ok, fmt("`spdnet info` default = %ld (%+.1f%% vs 3.04M, band +-15%%); C=1 toy = %ld, hand count = %zu (159)",
                    reported, 100.0 * rel, toy_count, hand)};
}

// 9 ------------------------------------------------------------------------
Outcome determinism(const fs::path& dir) {
    ModelConfig m = overfit_model();
    TrainConfig t = overfit_train(12);
    t.batch_size = 2;
    t.patch_size = 32;
    t.hflip = true;
    const auto data = synthetic_dataset(4, 48, 48, SynthRainParams{}, 3);

    Trainer a(m, t, data), b(m, t, data);
    a.run();
    b.run();
    const bool logs_equal = a.losses() == b.losses() && a.model().state() == b.model().state();

    Trainer full(m, t, data);
    for (int i = 0; i < 6; ++i) full.step();
    save_checkpoint(dir / "mid.ckpt", full.checkpoint());
    const double expected = full.next_loss();
    const double stepped = full.step().loss;
    Trainer resumed(load_checkpoint(dir / "mid.ckpt"), data);
    const double got_next = resumed.next_loss();
    const double got_step = resumed.step().loss;
    const bool resume_equal = got_next == expected && got_step == stepped && resumed.model().state() == full.model().state();

    // the same through the CLI, comparing the loss column of train_log.csv
    save_pairs(dir / "data", data);
    std::ofstream(dir / "det.yaml") << "model: {base_channels: 8, se_reduction: 4, num_wmlm: 2, levels_per_wmlm: 2}\n"
                                       "train: {batch_size: 2, patch_size: 32, max_steps: 5}\n";
    const auto q = [&](const std::string& rel) { return spdnet::testing::shell_quote((dir / rel).string()); };
    const auto losses_of = [&](const std::string& run) {
        std::ifstream in(dir / run / "train_log.csv");
        std::string line, out;
        while (std::getline(in, line)) {
            const auto a1 = line.find(',');
            out += line.substr(0, line.find(',', a1 + 1)) + "\n";
        }
        return out;
    };
    const std::string base = "train --config " + q("det.yaml") + " --input " + q("data") + " --seed 4 --output ";
    const int c1 = spdnet::testing::run_cli(base + q("r1"), dir).code;
    const int c2 = spdnet::testing::run_cli(base + q("r2"), dir).code;
    const bool cli_equal = c1 == 0 && c2 == 0 && !losses_of("r1").empty() && losses_of("r1") == losses_of("r2");

    return {logs_equal && resume_equal && cli_equal,
            fmt("identical runs: losses+weights %s; resume at step 6: next loss %s (%.9g), step loss %s, weights %s; "
                "CLI train logs %s",
                logs_equal ? "bit-identical" : "DIFFER", got_next == expected ? "bit-identical" : "DIFFERS", expected,
                got_step == stepped ? "bit-identical" : "DIFFERS",
                resumed.model().state() == full.model().state() ? "bit-identical" : "DIFFER",
                cli_equal ? "bit-identical" : "DIFFER")};
}

Outcome guarded(const std::function<Outcome()>& f) {
    try {
        return f();
    } catch (const std::exception& e) {
        return {false, std::string("exception: ") + e.what()};
    }
}

}  // namespace

int main() {
    const fs::path dir = scratch_dir();
    int failures = 0;
    const auto report = [&](int id, const char* name, const Outcome& o) {
        std::printf("%s  [%d] %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
        std::fflush(stdout);
        failures += !o.pass;
    };

    report(1, "wavelet round-trip", guarded(wavelet_round_trip));
    report(2, "RCP achromatic invariance", guarded(rcp_invariance));
    report(3, "gradient correctness", guarded(gradient_checks));
    report(4, "zero-init identity", guarded(zero_init_identity));
    report(7, "metric exactness", guarded(metric_exactness));
    report(8, "parameter calibration", guarded([&] { return parameter_calibration(dir); }));
    report(9, "determinism and resume", guarded([&] { return determinism(dir); }));

    OverfitResult of;
    std::string of_error;
    try {
        of = overfit();
    } catch (const std::exception& e) {
        of_error = e.what();
    }
    if (!of_error.empty()) {
        report(5, "overfit oracle", {false, "exception: " + of_error});
        report(6, "iterative guidance", {false, "overfit run did not complete"});
    } else {
        report(5, "overfit oracle",
               {of.psnr_final >= 30.0, fmt("C=8, 2 stages, 2 levels, 4 pairs 64x64, %ld steps at lr 5e-4 in %.0f s: "
                                           "train Y-PSNR(B_final) = %.2f dB (>= 30), SSIM %.4f",
                                           of.steps, of.seconds, of.psnr_final, of.ssim_final)});
        const bool direction = of.psnr_final >= of.psnr_first - 0.1;
        std::string off = of.off_error.empty()
                              ? fmt("rcp_update=off: 200 steps, loss %.4f -> %.4f, PSNR %.2f dB", of.off_loss_first,
                                    of.off_loss_last, of.off_psnr)
                              : "rcp_update=off failed: " + of.off_error;
        report(6, "iterative guidance",
               {direction && of.off_ran, fmt("PSNR(B_final) %.2f dB vs PSNR(B1) %.2f dB (needs >= B1 - 0.1); ",
                                             of.psnr_final, of.psnr_first) + off});
    }

    fs::remove_all(dir);
    std::printf("%s: %d of 9 criteria failed\n", failures ? "FAILED" : "ALL PASSED", failures);
    return failures ? 1 : 0;
}
