#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include <yaml-cpp/yaml.h>

#include "json.hpp"
#include "spdnet/data.hpp"
#include "spdnet/errors.hpp"
#include "spdnet/model.hpp"

namespace spdnet {

/// Optimisation settings. The ablation overrides, when set, replace the
/// corresponding ModelConfig fields.
struct TrainConfig {
    double lr = 5e-4;
    int batch_size = 16;
    int patch_size = 128;
    int epochs = 1;
    long max_steps = 0;  // > 0 takes precedence over epochs
    std::uint64_t seed = 0;
    bool hflip = true;
    double grad_clip = 10.0;  // global L2 norm; <= 0 disables
    long checkpoint_every = 0;
    long eval_every = 0;

    std::optional<bool> use_ifm;
    std::optional<bool> use_ensemble;
    std::optional<bool> rcp_update;
    std::optional<int> num_wmlm;

    ModelConfig apply(ModelConfig m) const {
        if (use_ifm) m.use_ifm = *use_ifm;
        if (use_ensemble) m.use_ensemble = *use_ensemble;
        if (rcp_update) m.rcp_update = *rcp_update;
        if (num_wmlm) m.num_wmlm = *num_wmlm;
        return m;
    }

    void validate(const ModelConfig& model) const {
        if (!(lr > 0.0)) throw InvalidInput("TrainConfig: lr must be > 0");
        if (batch_size < 1) throw InvalidInput("TrainConfig: batch_size must be >= 1");
        if (epochs < 0 || max_steps < 0) throw InvalidInput("TrainConfig: epochs and max_steps must be >= 0");
        if (checkpoint_every < 0 || eval_every < 0) throw InvalidInput("TrainConfig: intervals must be >= 0");
        const int m = model.size_multiple();
        if (patch_size < 1 || patch_size % m != 0) {
            throw InvalidInput("TrainConfig: patch_size " + std::to_string(patch_size) + " must be divisible by " +
                               std::to_string(m));
        }
    }

    long total_steps(std::size_t dataset_size) const {
        if (max_steps > 0) return max_steps;
        const long per_epoch = (static_cast<long>(dataset_size) + batch_size - 1) / batch_size;
        return per_epoch * epochs;
    }
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
};

// ---- JSON (checkpoint headers) ----

inline nlohmann::json to_json(const ModelConfig& c) {
    return {{"base_channels", c.base_channels},   {"num_wmlm", c.num_wmlm},
            {"levels_per_wmlm", c.levels_per_wmlm}, {"srir_per_level", c.srir_per_level},
            {"rem_srir_depth", c.rem_srir_depth},   {"se_reduction", c.se_reduction},
            {"blocks_per_srir", c.blocks_per_srir}, {"use_ifm", c.use_ifm},
            {"use_ensemble", c.use_ensemble},       {"rcp_update", c.rcp_update}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    const std::set<std::string> known{"base_channels", "num_wmlm",       "levels_per_wmlm", "srir_per_level",
                                      "rem_srir_depth", "se_reduction",  "blocks_per_srir", "use_ifm",
                                      "use_ensemble",   "rcp_update"};
    if (!j.is_object()) throw CheckpointIncompatible("model config is not an object");
    for (const auto& [k, v] : j.items()) {
        if (!known.count(k)) throw CheckpointIncompatible("unknown model config key '" + k + "'");
    }
    try {
        c.base_channels = j.at("base_channels").get<int>();
        c.num_wmlm = j.at("num_wmlm").get<int>();
        c.levels_per_wmlm = j.at("levels_per_wmlm").get<int>();
        c.srir_per_level = j.at("srir_per_level").get<int>();
        c.rem_srir_depth = j.at("rem_srir_depth").get<int>();
        c.se_reduction = j.at("se_reduction").get<int>();
        c.blocks_per_srir = j.at("blocks_per_srir").get<int>();
        c.use_ifm = j.at("use_ifm").get<bool>();
        c.use_ensemble = j.at("use_ensemble").get<bool>();
        c.rcp_update = j.at("rcp_update").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointIncompatible(std::string("bad model config: ") + e.what());
    }
    return c;
}

inline nlohmann::json to_json(const TrainConfig& t) {
    nlohmann::json j{{"lr", t.lr},
                     {"batch_size", t.batch_size},
                     {"patch_size", t.patch_size},
                     {"epochs", t.epochs},
                     {"max_steps", t.max_steps},
                     {"seed", t.seed},
                     {"hflip", t.hflip},
                     {"grad_clip", t.grad_clip},
                     {"checkpoint_every", t.checkpoint_every},
                     {"eval_every", t.eval_every}};
    if (t.use_ifm) j["use_ifm"] = *t.use_ifm;
    if (t.use_ensemble) j["use_ensemble"] = *t.use_ensemble;
    if (t.rcp_update) j["rcp_update"] = *t.rcp_update;
    if (t.num_wmlm) j["num_wmlm"] = *t.num_wmlm;
    return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig t;
    try {
        t.lr = j.value("lr", t.lr);
        t.batch_size = j.value("batch_size", t.batch_size);
        t.patch_size = j.value("patch_size", t.patch_size);
        t.epochs = j.value("epochs", t.epochs);
        t.max_steps = j.value("max_steps", t.max_steps);
        t.seed = j.value("seed", t.seed);
        t.hflip = j.value("hflip", t.hflip);
        t.grad_clip = j.value("grad_clip", t.grad_clip);
        t.checkpoint_every = j.value("checkpoint_every", t.checkpoint_every);
        t.eval_every = j.value("eval_every", t.eval_every);
        if (j.contains("use_ifm")) t.use_ifm = j["use_ifm"].get<bool>();
        if (j.contains("use_ensemble")) t.use_ensemble = j["use_ensemble"].get<bool>();
        if (j.contains("rcp_update")) t.rcp_update = j["rcp_update"].get<bool>();
        if (j.contains("num_wmlm")) t.num_wmlm = j["num_wmlm"].get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointIncompatible(std::string("bad train config: ") + e.what());
    }
    return t;
}

// ---- YAML (user-facing config files) ----

namespace detail {

inline std::string where(const YAML::Node& n) {
    const auto mark = n.Mark();
    if (mark.is_null()) return "";
    return "line " + std::to_string(mark.line + 1) + ": ";
}

template <typename V>
V get(const YAML::Node& n, const std::string& key) {
    try {
        return n.as<V>();
    } catch (const YAML::Exception&) {
        throw ConfigError(where(n) + "invalid value for '" + key + "'");
    }
}

template <typename V>
Range<V> get_range(const YAML::Node& n, const std::string& key) {
    if (n.IsScalar()) {
        const V v = get<V>(n, key);
        return {v, v};
    }
    if (!n.IsSequence() || n.size() != 2) throw ConfigError(where(n) + "'" + key + "' must be a value or [lo, hi]");
    return {get<V>(n[0], key), get<V>(n[1], key)};
}

inline void require_map(const YAML::Node& n, const std::string& what) {
    if (!n.IsMap()) throw ConfigError(where(n) + "'" + what + "' must be a mapping");
}

inline YAML::Node parse_yaml(const std::string& text) {
    try {
        return YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw ConfigError("line " + std::to_string(e.mark.line + 1) + ", column " + std::to_string(e.mark.column + 1) +
                          ": " + e.msg);
    }
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace detail

/// Parses a config document of the form
///
///   model: {base_channels: 8, num_wmlm: 2, ...}
///   train: {lr: 5.0e-4, batch_size: 4, ..., ablation: {rcp_update: false}}
///
/// Both sections are optional; unknown keys are rejected.
inline RunConfig parse_run_config(const std::string& text) {
    using detail::get;
    const YAML::Node root = detail::parse_yaml(text);
    RunConfig cfg;
    if (root.IsNull()) return cfg;
    detail::require_map(root, "document");
    for (const auto& kv : root) {
        const auto section = kv.first.as<std::string>();
        const YAML::Node& body = kv.second;
        if (section == "model") {
            detail::require_map(body, "model");
            auto& m = cfg.model;
            for (const auto& e : body) {
                const auto k = e.first.as<std::string>();
                const YAML::Node& v = e.second;
                if (k == "base_channels") m.base_channels = get<int>(v, k);
                else if (k == "num_wmlm") m.num_wmlm = get<int>(v, k);
                else if (k == "levels_per_wmlm") m.levels_per_wmlm = get<int>(v, k);
                else if (k == "srir_per_level") m.srir_per_level = get<int>(v, k);
                else if (k == "rem_srir_depth") m.rem_srir_depth = get<int>(v, k);
                else if (k == "se_reduction") m.se_reduction = get<int>(v, k);
                else if (k == "blocks_per_srir") m.blocks_per_srir = get<int>(v, k);
                else if (k == "use_ifm") m.use_ifm = get<bool>(v, k);
                else if (k == "use_ensemble") m.use_ensemble = get<bool>(v, k);
                else if (k == "rcp_update") m.rcp_update = get<bool>(v, k);
                else throw ConfigError(detail::where(e.first) + "unknown key 'model." + k + "'");
            }
        } else if (section == "train") {
            detail::require_map(body, "train");
            auto& t = cfg.train;
            for (const auto& e : body) {
                const auto k = e.first.as<std::string>();
                const YAML::Node& v = e.second;
                if (k == "lr") t.lr = get<double>(v, k);
                else if (k == "batch_size") t.batch_size = get<int>(v, k);
                else if (k == "patch_size") t.patch_size = get<int>(v, k);
                else if (k == "epochs") t.epochs = get<int>(v, k);
                else if (k == "max_steps") t.max_steps = get<long>(v, k);
                else if (k == "seed") t.seed = get<std::uint64_t>(v, k);
                else if (k == "hflip") t.hflip = get<bool>(v, k);
                else if (k == "grad_clip") t.grad_clip = get<double>(v, k);
                else if (k == "checkpoint_every") t.checkpoint_every = get<long>(v, k);
                else if (k == "eval_every") t.eval_every = get<long>(v, k);
                else if (k == "ablation") {
                    detail::require_map(v, "train.ablation");
                    for (const auto& a : v) {
                        const auto ak = a.first.as<std::string>();
                        if (ak == "use_ifm") t.use_ifm = get<bool>(a.second, ak);
                        else if (ak == "use_ensemble") t.use_ensemble = get<bool>(a.second, ak);
                        else if (ak == "rcp_update") t.rcp_update = get<bool>(a.second, ak);
                        else if (ak == "num_wmlm") t.num_wmlm = get<int>(a.second, ak);
                        else throw ConfigError(detail::where(a.first) + "unknown key 'train.ablation." + ak + "'");
                    }
                } else {
                    throw ConfigError(detail::where(e.first) + "unknown key 'train." + k + "'");
                }
            }
        } else {
            throw ConfigError(detail::where(kv.first) + "unknown section '" + section + "'");
        }
    }
    try {
        cfg.model.validate();
        cfg.train.apply(cfg.model).validate();
        cfg.train.validate(cfg.train.apply(cfg.model));
    } catch (const InvalidInput& e) {
        throw ConfigError(e.what());
    }
    return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    try {
        return parse_run_config(detail::read_text(path));
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

/// Streak parameters, e.g. {num_streaks: [50, 120], angle: [70, 110], intensity: [0.2, 0.5]}.
inline SynthRainParams parse_synth_params(const std::string& text) {
    using detail::get;
    using detail::get_range;
    const YAML::Node root = detail::parse_yaml(text);
    SynthRainParams p;
    if (root.IsNull()) return p;
    detail::require_map(root, "document");
    for (const auto& e : root) {
        const auto k = e.first.as<std::string>();
        const YAML::Node& v = e.second;
        if (k == "num_streaks") p.num_streaks = get_range<int>(v, k);
        else if (k == "angle") p.angle = get_range<double>(v, k);
        else if (k == "length") p.length = get_range<double>(v, k);
        else if (k == "width") p.width = get_range<double>(v, k);
        else if (k == "intensity") p.intensity = get_range<double>(v, k);
        else if (k == "blur_kernel_len") p.blur_kernel_len = get<int>(v, k);
        else if (k == "seed") p.seed = get<std::uint64_t>(v, k);
        else throw ConfigError(detail::where(e.first) + "unknown key '" + k + "'");
    }
    try {
        p.validate();
    } catch (const InvalidInput& e) {
        throw ConfigError(e.what());
    }
    return p;
}

inline SynthRainParams load_synth_params(const std::filesystem::path& path) {
    try {
        return parse_synth_params(detail::read_text(path));
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

}  // namespace spdnet
