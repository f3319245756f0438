// Writes procedural clean scenes, a starting point for `spdnet synth`.
#include <cstdio>
#include <filesystem>

#include <CLI11.hpp>

#include "spdnet/data.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Write procedural clean scenes as PNG files"};
    std::string out_dir;
    int count = 8;
    int size = 64;
    std::uint64_t seed = 0;
    app.add_option("--out-dir", out_dir, "Destination directory")->required();
    app.add_option("--count", count, "Number of scenes")->capture_default_str();
    app.add_option("--size", size, "Width and height in pixels")->capture_default_str();
    app.add_option("--seed", seed, "Random seed")->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    if (count < 1 || size < 16) {
        std::fprintf(stderr, "error: need --count >= 1 and --size >= 16\n");
        return 2;
    }
    std::filesystem::create_directories(out_dir);
    for (int i = 0; i < count; ++i) {
        spdnet::Rng rng = spdnet::Rng::derive(seed, static_cast<std::uint64_t>(i), 0);
        char name[32];
        std::snprintf(name, sizeof name, "scene_%04d.png", i);
        spdnet::image::write_rgb(std::filesystem::path(out_dir) / name, spdnet::procedural_scene(size, size, rng));
    }
    std::printf("wrote %d scenes to %s\n", count, out_dir.c_str());
    return 0;
}
