#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "gradcheck.hpp"
#include "spdnet/data.hpp"
#include "spdnet/rcp.hpp"

using namespace spdnet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("spdnet_data_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                            "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

Tensor<float> scene(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    return procedural_scene(h, w, rng);
}

}  // namespace

TEST(SynthRain, ZeroStreaksLeaveImageUntouched) {
    SynthRainParams p;
    p.num_streaks = {0, 0};
    const auto clean = scene(24, 32, 1);
    const auto pair = synth_rain(clean, p);
    EXPECT_EQ(pair.rainy, clean);
    EXPECT_EQ(pair.clean, clean);
}

TEST(SynthRain, DeterministicForSameSeed) {
    SynthRainParams p;
    p.seed = 99;
    const auto clean = scene(32, 32, 2);
    EXPECT_EQ(synth_rain(clean, p).rainy, synth_rain(clean, p).rainy);
    p.seed = 100;
    const auto other = synth_rain(clean, p).rainy;
    p.seed = 99;
    EXPECT_NE(synth_rain(clean, p).rainy, other);
}

TEST(SynthRain, StaysInUnitRangeAndAddsRain) {
    SynthRainParams p;
    p.num_streaks = {100, 200};
    p.intensity = {0.5, 0.8};
    for (std::uint64_t s = 0; s < 5; ++s) {
        p.seed = s;
        const auto clean = scene(40, 40, s);
        const auto pair = synth_rain(clean, p);
        double added = 0.0;
        for (std::size_t i = 0; i < clean.size(); ++i) {
            EXPECT_GE(pair.rainy[i], 0.0f);
            EXPECT_LE(pair.rainy[i], 1.0f);
            EXPECT_GE(pair.rainy[i], clean[i]);
            added += pair.rainy[i] - clean[i];
        }
        EXPECT_GT(added, 0.0);
    }
}

TEST(SynthRain, StreaksAreAchromatic) {
    // Where no channel clipped, every channel received the same increment,
    // so the residue channel is unchanged.
    SynthRainParams p;
    p.seed = 3;
    Rng rng(4);
    const auto clean = spdnet::testing::random_tensor({1, 3, 32, 32}, 5, 0.0, 0.6);
    const auto pair = synth_rain(clean, p, rng);
    const auto rc = rcp::residue_channel(clean);
    const auto rr = rcp::residue_channel(pair.rainy);
    int checked = 0;
    for (int y = 0; y < 32; ++y) {
        for (int x = 0; x < 32; ++x) {
            bool clipped = false;
            for (int c = 0; c < 3; ++c) clipped |= pair.rainy(0, c, y, x) >= 1.0;
            if (clipped) continue;
            EXPECT_NEAR(rr(0, 0, y, x), rc(0, 0, y, x), 1e-15);
            ++checked;
        }
    }
    EXPECT_GT(checked, 900);
}

TEST(SynthRain, InvalidParams) {
    const auto clean = scene(8, 8, 1);
    SynthRainParams p;
    p.intensity = {0.1, 0.9};
    EXPECT_THROW(synth_rain(clean, p), InvalidInput);
    p = {};
    p.num_streaks = {5, 2};
    EXPECT_THROW(synth_rain(clean, p), InvalidInput);
    p = {};
    p.intensity = {0.0, 0.3};
    EXPECT_THROW(synth_rain(clean, p), InvalidInput);
    EXPECT_THROW(synth_rain(Tensor<float>({1, 1, 8, 8}), SynthRainParams{}), InvalidInput);
}

TEST(RandomPatch, FullSizeIsIdentityWithoutFlip) {
    const auto clean = scene(16, 16, 6);
    const RainPair pair{clean, clean, "k"};
    Rng rng(1);
    const auto patch = random_patch(pair, 16, rng, false);
    EXPECT_EQ(patch.rainy, clean);
    EXPECT_EQ(patch.key, "k");
}

TEST(RandomPatch, SameWindowForBothImages) {
    const auto img = scene(30, 20, 7);
    const RainPair pair{img, img, "k"};
    Rng rng(2);
    for (int i = 0; i < 20; ++i) {
        const auto patch = random_patch(pair, 8, rng, true);
        EXPECT_EQ(patch.rainy, patch.clean);
    }
}

TEST(RandomPatch, MatchesSourceWindow) {
    // Brute-force search for the window the patch came from.
    const auto img = spdnet::testing::random_tensor({1, 3, 12, 10}, 8, 0.0, 1.0).cast<float>();
    const RainPair pair{img, img, "k"};
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const auto patch = random_patch(pair, 5, rng, true);
        int matches = 0;
        for (int y0 = 0; y0 + 5 <= 12; ++y0) {
            for (int x0 = 0; x0 + 5 <= 10; ++x0) {
                for (bool flip : {false, true}) {
                    bool same = true;
                    for (int c = 0; c < 3 && same; ++c) {
                        for (int y = 0; y < 5 && same; ++y) {
                            for (int x = 0; x < 5 && same; ++x) {
                                same = patch.rainy(0, c, y, flip ? 4 - x : x) == img(0, c, y0 + y, x0 + x);
                            }
                        }
                    }
                    matches += same;
                }
            }
        }
        EXPECT_EQ(matches, 1);
    }
}

TEST(RandomPatch, ReproducibleAndFlipsSometimes) {
    const auto img = scene(32, 32, 9);
    const RainPair pair{img, img, "k"};
    Rng a(11), b(11);
    for (int i = 0; i < 10; ++i) EXPECT_EQ(random_patch(pair, 8, a).rainy, random_patch(pair, 8, b).rainy);
    const auto full = spdnet::testing::random_tensor({1, 3, 6, 6}, 10, 0.0, 1.0).cast<float>();
    const RainPair square{full, full, "s"};
    Rng rng(12);
    int flipped = 0;
    for (int i = 0; i < 200; ++i) flipped += random_patch(square, 6, rng, true).rainy != full;
    EXPECT_GT(flipped, 60);
    EXPECT_LT(flipped, 140);
}

TEST(RandomPatch, TooSmallImage) {
    const auto img = scene(8, 8, 1);
    Rng rng(1);
    EXPECT_THROW(random_patch(RainPair{img, img, "k"}, 9, rng), InvalidInput);
}

TEST(Padding, AlreadyDivisibleIsIdentity) {
    const auto img = scene(16, 12, 2);
    const auto [padded, crop] = pad_to_multiple(img, 4);
    EXPECT_EQ(padded, img);
    EXPECT_EQ(crop, (CropRecord{16, 12}));
}

TEST(Padding, PadsUpToMultiple) {
    const auto img = scene(130, 130, 3);
    const auto [padded, crop] = pad_to_multiple(img, 4);
    EXPECT_EQ(padded.shape(), (Shape{1, 3, 132, 132}));
    EXPECT_EQ(crop, (CropRecord{130, 130}));
    // reflect without repeating the edge
    EXPECT_EQ(padded(0, 1, 5, 130), img(0, 1, 5, 128));
    EXPECT_EQ(padded(0, 1, 5, 131), img(0, 1, 5, 127));
    EXPECT_EQ(padded(0, 2, 131, 131), img(0, 2, 127, 127));
}

TEST(Padding, RoundTripRandomSizes) {
    Rng rng(4);
    for (int trial = 0; trial < 30; ++trial) {
        const int h = static_cast<int>(rng.uniform_int(1, 40));
        const int w = static_cast<int>(rng.uniform_int(1, 40));
        const int m = static_cast<int>(rng.uniform_int(1, 16));
        const auto img = spdnet::testing::random_tensor({1, 3, h, w}, 20 + trial);
        const auto [padded, crop] = pad_to_multiple(img, m);
        EXPECT_EQ(padded.shape().h % m, 0);
        EXPECT_EQ(padded.shape().w % m, 0);
        EXPECT_LT(padded.shape().h - h, m);
        EXPECT_EQ(unpad(padded, crop), img);
    }
    EXPECT_THROW(pad_to_multiple(Tensor<float>({1, 3, 4, 4}), 0), InvalidInput);
}

TEST(ReflectIndex, MatchesMirrorSequence) {
    const int expected[] = {0, 1, 2, 3, 2, 1, 0, 1, 2, 3, 2};
    for (int i = 0; i < 11; ++i) EXPECT_EQ(reflect_index(i, 4), expected[i]);
    EXPECT_EQ(reflect_index(5, 1), 0);
}

TEST(LoadPairs, EmptyDirectories) {
    TempDir dir;
    fs::create_directories(dir.path / "rainy");
    fs::create_directories(dir.path / "gt");
    EXPECT_TRUE(load_pairs(dir.path).empty());
}

TEST(LoadPairs, LexicographicOrderAndValues) {
    TempDir dir;
    auto pairs = synthetic_dataset(2, 16, 20, SynthRainParams{}, 5);
    pairs[0].key = "b_scene";
    pairs[1].key = "a_scene";
    save_pairs(dir.path, pairs);
    const auto loaded = load_pairs(dir.path);
    ASSERT_EQ(loaded.size(), 2u);
    EXPECT_EQ(loaded[0].key, "a_scene");
    EXPECT_EQ(loaded[1].key, "b_scene");
    EXPECT_EQ(loaded[0].rainy.shape(), (Shape{1, 3, 16, 20}));
    // 8-bit quantisation is the only difference
    EXPECT_LE(max_abs_diff(loaded[0].clean, pairs[1].clean), 0.5f / 255.0f + 1e-6f);
    EXPECT_LE(max_abs_diff(loaded[1].rainy, pairs[0].rainy), 0.5f / 255.0f + 1e-6f);
}

TEST(LoadPairs, MissingCounterpart) {
    TempDir dir;
    save_pairs(dir.path, synthetic_dataset(2, 8, 8, SynthRainParams{}, 6));
    fs::remove(dir.path / "gt" / "scene_0001.png");
    try {
        load_pairs(dir.path);
        FAIL() << "expected DatasetIntegrity";
    } catch (const DatasetIntegrity& e) {
        EXPECT_NE(std::string(e.what()).find("scene_0001"), std::string::npos);
    }
}

TEST(LoadPairs, SizeMismatch) {
    TempDir dir;
    save_pairs(dir.path, synthetic_dataset(1, 8, 8, SynthRainParams{}, 7));
    image::write_rgb(dir.path / "gt" / "scene_0000.png", scene(8, 12, 1));
    EXPECT_THROW(load_pairs(dir.path), DatasetIntegrity);
}

TEST(LoadPairs, UndecodableImage) {
    TempDir dir;
    save_pairs(dir.path, synthetic_dataset(1, 8, 8, SynthRainParams{}, 8));
    std::ofstream(dir.path / "rainy" / "scene_0000.png") << "not an image";
    EXPECT_THROW(load_pairs(dir.path), DecodeError);
}

TEST(LoadPairs, MissingSubdirectory) {
    TempDir dir;
    fs::create_directories(dir.path / "rainy");
    EXPECT_THROW(load_pairs(dir.path), DatasetIntegrity);
}

TEST(ImageIo, ByteRoundingIsHalfAwayFromZero) {
    EXPECT_EQ(image::to_byte(0.0), 0);
    EXPECT_EQ(image::to_byte(1.0), 255);
    EXPECT_EQ(image::to_byte(-0.3), 0);
    EXPECT_EQ(image::to_byte(1.7), 255);
    EXPECT_EQ(image::to_byte(0.5 / 255.0), 1);
    EXPECT_EQ(image::to_byte(2.5 / 255.0), 3);
    EXPECT_EQ(image::to_byte(2.49 / 255.0), 2);
}

TEST(ImageIo, RgbRoundTripIsExactOnByteValues) {
    TempDir dir;
    Tensor<float> img({1, 3, 5, 7});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>((i * 37) % 256) / 255.0f;
    image::write_rgb(dir.path / "x.png", img);
    EXPECT_EQ(image::read_rgb(dir.path / "x.png"), img);
    EXPECT_THROW(image::read_rgb(dir.path / "missing.png"), DecodeError);
}

TEST(ProceduralScene, DeterministicAndInRange) {
    const auto a = scene(20, 24, 5);
    EXPECT_EQ(a, scene(20, 24, 5));
    EXPECT_NE(a, scene(20, 24, 6));
    for (float v : a.values()) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(SyntheticDataset, PairDependsOnlyOnSeedAndIndex) {
    const auto a = synthetic_dataset(3, 16, 16, SynthRainParams{}, 1);
    const auto b = synthetic_dataset(5, 16, 16, SynthRainParams{}, 1);
    for (int i = 0; i < 3; ++i) {
        EXPECT_EQ(a[i].rainy, b[i].rainy);
        EXPECT_EQ(a[i].key, b[i].key);
    }
}
