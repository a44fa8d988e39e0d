#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "segkit/datagen.hpp"
#include "segkit/prng.hpp"
#include "segkit/tensor.hpp"

using namespace segkit;

TEST_CASE("generate: shapes, value ranges, and binary masks") {
    SynthTask task;
    task.size = 64;
    task.seed = 7;
    auto data = generate<float>(task, 8);
    REQUIRE(data.size() == 8);
    for (const auto& s : data) {
        REQUIRE(s.image.shape() == Shape4{1, 1, 64, 64});
        REQUIRE(s.mask.shape() == Shape4{1, 1, 64, 64});
        std::size_t fg = 0;
        for (std::size_t i = 0; i < s.image.size(); ++i) {
            CHECK(s.image[i] >= 0.0f);
            CHECK(s.image[i] <= 1.0f);
            const float m = s.mask[i];
            CHECK((m == 0.0f || m == 1.0f));
            fg += m == 1.0f;
        }
        CHECK(fg > 0);                      // every sample has foreground
        CHECK(fg < s.mask.size() / 2);      // blobs stay sparse
    }
}

TEST_CASE("generate: bright blobs sit where the mask says") {
    SynthTask task;
    task.size = 64;
    task.seed = 3;
    auto data = generate<float>(task, 4);
    for (const auto& s : data) {
        double fg_mean = 0, bg_mean = 0;
        std::size_t fg_n = 0, bg_n = 0;
        for (std::size_t i = 0; i < s.image.size(); ++i) {
            if (s.mask[i] > 0.5f) {
                fg_mean += s.image[i];
                ++fg_n;
            } else {
                bg_mean += s.image[i];
                ++bg_n;
            }
        }
        REQUIRE(fg_n > 0);
        REQUIRE(bg_n > 0);
        // foreground brightness = background + [0.35, 0.55] level
        CHECK(fg_mean / static_cast<double>(fg_n) >
              bg_mean / static_cast<double>(bg_n) + 0.2);
    }
}

TEST_CASE("generate: deterministic per seed, different across seeds") {
    SynthTask a;
    a.seed = 11;
    auto d1 = generate<double>(a, 3);
    auto d2 = generate<double>(a, 3);
    SynthTask b;
    b.seed = 12;
    auto d3 = generate<double>(b, 3);

    bool identical = true, differs = false;
    for (std::size_t k = 0; k < 3; ++k) {
        for (std::size_t i = 0; i < d1[k].image.size(); ++i) {
            identical &= d1[k].image[i] == d2[k].image[i] && d1[k].mask[i] == d2[k].mask[i];
            differs |= d1[k].image[i] != d3[k].image[i];
        }
    }
    CHECK(identical);
    CHECK(differs);
}

TEST_CASE("generate: argument validation") {
    SynthTask t;
    CHECK_THROWS_AS(generate<float>(t, 0), ArgError);
    SynthTask tiny;
    tiny.size = 4;
    CHECK_THROWS_AS(generate<float>(tiny, 1), ArgError);
    SynthTask blobless;
    blobless.max_blobs = 0;
    CHECK_THROWS_AS(generate<float>(blobless, 1), ArgError);
}

TEST_CASE("augment: zero ranges reproduce the input bitwise") {
    SynthTask task;
    task.seed = 21;
    auto data = generate<float>(task, 2);
    AugmentConfig none{0.0, 0.0, 0.0};
    Prng rng(5);
    for (const auto& s : data) {
        auto out = augment(s.image, s.mask, none, rng);
        for (std::size_t i = 0; i < s.image.size(); ++i) {
            CHECK(out.image[i] == s.image[i]);
            CHECK(out.mask[i] == s.mask[i]);
        }
    }
}

TEST_CASE("augment: disabled ranges consume the same number of draws") {
    SynthTask task;
    task.seed = 22;
    auto data = generate<float>(task, 1);
    AugmentConfig none{0.0, 0.0, 0.0};
    AugmentConfig full{};  // default ranges
    Prng a(9), b(9);
    augment(data[0].image, data[0].mask, none, a);
    augment(data[0].image, data[0].mask, full, b);
    CHECK(a.next_u64() == b.next_u64());  // streams stayed in lockstep
}

TEST_CASE("augment: deterministic per rng seed; masks stay binary") {
    SynthTask task;
    task.seed = 23;
    auto data = generate<float>(task, 1);
    AugmentConfig cfg{};
    Prng r1(13), r2(13), r3(14);
    auto o1 = augment(data[0].image, data[0].mask, cfg, r1);
    auto o2 = augment(data[0].image, data[0].mask, cfg, r2);
    auto o3 = augment(data[0].image, data[0].mask, cfg, r3);

    bool identical = true, differs = false;
    for (std::size_t i = 0; i < o1.image.size(); ++i) {
        identical &= o1.image[i] == o2.image[i];
        differs |= o1.image[i] != o3.image[i];
        CHECK((o1.mask[i] == 0.0f || o1.mask[i] == 1.0f));
        // bilinear resampling with zero fill cannot exceed the input range
        CHECK(o1.image[i] >= 0.0f);
        CHECK(o1.image[i] <= 1.0f);
    }
    CHECK(identical);
    CHECK(differs);
}

TEST_CASE("augment: shape mismatch throws") {
    auto img = zeros<float>(Shape4{1, 1, 8, 8});
    auto msk = zeros<float>(Shape4{1, 1, 8, 9});
    Prng rng(1);
    CHECK_THROWS_AS(augment(img, msk, AugmentConfig{}, rng), ShapeError);
}

TEST_CASE("volume io: slices ride on the batch axis") {
    Prng rng(31);
    auto vol = rand_uniform<float>(rng, Shape4{5, 1, 16, 16}, 0.0, 1.0);
    const auto path = (std::filesystem::temp_directory_path() / "segkit_vol.t4").string();
    save_volume(path, vol);
    auto back = load_volume<float>(path);
    REQUIRE(back.shape() == vol.shape());
    for (std::size_t i = 0; i < vol.size(); ++i) CHECK(back[i] == vol[i]);
    std::filesystem::remove(path);
}
