#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "spdnet/config.hpp"
#include "spdnet/errors.hpp"
#include "spdnet/model.hpp"

namespace spdnet {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct TrainState {
    long step = 0;  // optimizer steps completed
    long epoch = 0;
};

/// On disk:
///
///   "SPDNETCK" | u32 format version | u64 header length | JSON header | float32 data
///
/// The header holds the model config, training state, train config, and an
/// index of tensors {name, group, shape, offset} where group is "param",
/// "adam_m" or "adam_v" and offset counts floats from the start of the data.
/// Parameter names are "shallow.*" and "stage<n>.<module>.<layer>.{weight,bias}".
struct Checkpoint {
    static constexpr std::uint32_t kFormatVersion = 1;

    ModelConfig model;
    TrainState state;
    nlohmann::json train_config = nlohmann::json::object();
    std::map<std::string, Tensor<float>> weights;
    std::map<std::string, Tensor<float>> adam_m;
    std::map<std::string, Tensor<float>> adam_v;
    long adam_step = 0;
};

namespace detail {

inline constexpr char kMagic[8] = {'S', 'P', 'D', 'N', 'E', 'T', 'C', 'K'};

}  // namespace detail

/// Writes to a sibling temporary file, then renames over `path`.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    nlohmann::json tensors = nlohmann::json::array();
    std::vector<const Tensor<float>*> order;
    std::uint64_t offset = 0;
    const auto index = [&](const std::map<std::string, Tensor<float>>& group, const char* name) {
        for (const auto& [k, t] : group) {
            const Shape s = t.shape();
            tensors.push_back({{"name", k}, {"group", name}, {"shape", {s.n, s.c, s.h, s.w}}, {"offset", offset}});
            order.push_back(&t);
            offset += t.size();
        }
    };
    index(ck.weights, "param");
    index(ck.adam_m, "adam_m");
    index(ck.adam_v, "adam_v");
    const nlohmann::json header{{"model", to_json(ck.model)},
                                {"train_state", {{"step", ck.state.step}, {"epoch", ck.state.epoch}}},
                                {"train_config", ck.train_config},
                                {"optimizer", {{"type", "adam"}, {"step", ck.adam_step}}},
                                {"tensors", tensors}};
    const std::string text = header.dump();

    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        const std::uint32_t version = Checkpoint::kFormatVersion;
        const std::uint64_t len = text.size();
        out.write(detail::kMagic, sizeof detail::kMagic);
        out.write(reinterpret_cast<const char*>(&version), sizeof version);
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto* t : order) {
            out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(float)));
        }
        out.flush();
        if (!out) {
            out.close();
            std::filesystem::remove(tmp);
            throw Error("failed while writing " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, detail::kMagic, sizeof magic) != 0) {
        throw CheckpointIncompatible(path.string() + " is not an SPDNet checkpoint");
    }
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in) throw CheckpointIncompatible(path.string() + ": truncated header");
    if (version != Checkpoint::kFormatVersion) {
        throw CheckpointIncompatible(path.string() + ": unsupported format version " + std::to_string(version));
    }
    if (len > (std::uint64_t{1} << 30)) throw CheckpointIncompatible(path.string() + ": implausible header length");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw CheckpointIncompatible(path.string() + ": truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointIncompatible(path.string() + ": corrupt header: " + e.what());
    }
    std::vector<float> data;
    {
        const auto begin = in.tellg();
        in.seekg(0, std::ios::end);
        const auto bytes = static_cast<std::uint64_t>(in.tellg() - begin);
        in.seekg(begin);
        if (bytes % sizeof(float) != 0) throw CheckpointIncompatible(path.string() + ": truncated tensor data");
        data.resize(bytes / sizeof(float));
        in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
    }

    Checkpoint ck;
    try {
        ck.model = model_config_from_json(header.at("model"));
        ck.state.step = header.at("train_state").at("step").get<long>();
        ck.state.epoch = header.at("train_state").at("epoch").get<long>();
        ck.train_config = header.value("train_config", nlohmann::json::object());
        ck.adam_step = header.at("optimizer").at("step").get<long>();
        for (const auto& t : header.at("tensors")) {
            const auto dims = t.at("shape").get<std::vector<int>>();
            if (dims.size() != 4) throw CheckpointIncompatible("tensor shape must have 4 dims");
            const Shape s{dims[0], dims[1], dims[2], dims[3]};
            const auto offset = t.at("offset").get<std::uint64_t>();
            if (offset + s.size() > data.size()) {
                throw CheckpointIncompatible(path.string() + ": tensor data out of range for " + t.at("name").get<std::string>());
            }
            std::vector<float> values(data.begin() + static_cast<std::ptrdiff_t>(offset),
                                      data.begin() + static_cast<std::ptrdiff_t>(offset + s.size()));
            const auto group = t.at("group").get<std::string>();
            auto& target = group == "param"    ? ck.weights
                           : group == "adam_m" ? ck.adam_m
                           : group == "adam_v" ? ck.adam_v
                                               : throw CheckpointIncompatible("unknown tensor group '" + group + "'");
            target.emplace(t.at("name").get<std::string>(), Tensor<float>(s, std::move(values)));
        }
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointIncompatible(path.string() + ": malformed header: " + e.what());
    }
    return ck;
}

/// Rebuilds a model from a checkpoint; names and shapes must match its config.
template <typename T = float>
SPDNet<T> model_from_checkpoint(const Checkpoint& ck) {
    try {
        ck.model.validate();
    } catch (const InvalidInput& e) {
        throw CheckpointIncompatible(e.what());
    }
    SPDNet<T> net(ck.model);
    net.load_parameters(ck.weights);
    return net;
}

}  // namespace spdnet
