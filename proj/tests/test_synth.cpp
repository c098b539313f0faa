#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "cprn/synth.hpp"
#include "oracles.hpp"

using namespace cprn;
namespace fs = std::filesystem;

namespace {

synth::GenConfig small_cfg(std::uint64_t seed, int count) {
    synth::GenConfig cfg;
    cfg.seed = seed;
    cfg.count = count;
    cfg.h = 64;
    cfg.w = 64;
    return cfg;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("generation is deterministic: same seed gives byte-identical datasets") {
    auto a = synth::generate(small_cfg(42, 12));
    auto b = synth::generate(small_cfg(42, 12));
    REQUIRE(a.samples.size() == b.samples.size());
    for (size_t i = 0; i < a.samples.size(); ++i) {
        CHECK(a.samples[i].image == b.samples[i].image);
        CHECK(a.samples[i].truth == b.samples[i].truth);
        CHECK(a.samples[i].tokens == b.samples[i].tokens);
        CHECK(a.samples[i].referent == b.samples[i].referent);
    }
    auto c = synth::generate(small_cfg(43, 12));
    bool any_diff = false;
    for (size_t i = 0; i < a.samples.size(); ++i) {
        if (a.samples[i].image != c.samples[i].image) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("every expression resolves uniquely to its referent (grammar oracle)") {
    auto ds = synth::generate(small_cfg(7, 40));
    for (const auto& s : ds.samples) {
        REQUIRE(s.scene.has_value());
        REQUIRE(s.spec.has_value());
        auto matches = synth::resolve(*s.scene, *s.spec);
        REQUIRE(matches.size() == 1);
        CHECK(matches[0] == s.referent);
    }
}

TEST_CASE("scene invariants: duplicate category, mask ratio bookkeeping, token limit") {
    auto ds = synth::generate(small_cfg(11, 30));
    for (const auto& s : ds.samples) {
        const auto& scene = *s.scene;
        bool dup = false;
        for (size_t a = 0; a < scene.objects.size() && !dup; ++a)
            for (size_t b = a + 1; b < scene.objects.size(); ++b)
                if (scene.objects[a].shape == scene.objects[b].shape) {
                    dup = true;
                    break;
                }
        CHECK(dup);
        CHECK_FALSE(scene.overlapping);

        long area = 0;
        for (auto v : s.truth) area += v;
        CHECK(s.mask_ratio ==
              doctest::Approx(static_cast<double>(area) / (64.0 * 64.0)).epsilon(1e-12));
        CHECK(s.token_length == static_cast<int>(s.tokens.size()));
        CHECK(s.token_length <= 20);
        CHECK(s.token_length >= 1);
    }
}

TEST_CASE("subset thresholds: 0.03 mask ratio and 18 tokens") {
    auto ds = synth::generate(small_cfg(13, 60));
    auto small = synth::small_scale_indices(ds);
    auto complex_split = synth::complex_language_indices(ds);
    CHECK(!small.empty());
    CHECK(!complex_split.empty());
    std::set<size_t> small_set(small.begin(), small.end());
    std::set<size_t> complex_set(complex_split.begin(), complex_split.end());
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        CHECK(small_set.count(i) == (ds.samples[i].mask_ratio < 0.03 ? 1 : 0));
        CHECK(complex_set.count(i) == (ds.samples[i].token_length > 18 ? 1 : 0));
    }
    // a crafted 2% sample falls in the small split; a 19-token one in complex
    synth::Dataset crafted;
    crafted.h = 64;
    crafted.w = 64;
    synth::Sample s;
    s.mask_ratio = 0.02;
    s.token_length = 19;
    crafted.samples.push_back(s);
    CHECK(synth::small_scale_indices(crafted) == std::vector<size_t>{0});
    CHECK(synth::complex_language_indices(crafted) == std::vector<size_t>{0});
}

TEST_CASE("dataset round trip through PPM/PGM and the manifest") {
    const auto dir = fs::temp_directory_path() / "cprn_ds_test";
    fs::remove_all(dir);
    auto ds = synth::generate(small_cfg(17, 6));
    synth::save_dataset(ds, dir.string());
    auto loaded = synth::load_dataset(dir.string());
    REQUIRE(loaded.samples.size() == ds.samples.size());
    CHECK(loaded.h == ds.h);
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        CHECK(loaded.samples[i].image == ds.samples[i].image);  // quantized at render time
        CHECK(loaded.samples[i].truth == ds.samples[i].truth);
        CHECK(loaded.samples[i].tokens == ds.samples[i].tokens);
        CHECK(loaded.samples[i].referent == ds.samples[i].referent);
        CHECK(loaded.samples[i].mask_ratio == ds.samples[i].mask_ratio);
    }

    // saving twice produces identical bytes
    const auto dir2 = fs::temp_directory_path() / "cprn_ds_test2";
    fs::remove_all(dir2);
    synth::save_dataset(ds, dir2.string());
    CHECK(slurp(dir / "manifest.jsonl") == slurp(dir2 / "manifest.jsonl"));
    CHECK(slurp(dir / "img" / "000000.ppm") == slurp(dir2 / "img" / "000000.ppm"));

    CHECK_THROWS_AS(synth::load_dataset((dir / "nope").string()), ValueError);
}

TEST_CASE("pgm/ppm round trip preserves pixels") {
    const auto dir = fs::temp_directory_path() / "cprn_pnm_test";
    fs::create_directories(dir);
    Rng rng(19);
    std::vector<real> img(8 * 6 * 3);
    for (auto& v : img) {
        v = real(std::lround(rng.uniform() * 255.0)) / real(255);
    }
    synth::write_ppm((dir / "x.ppm").string(), img, 8, 6);
    int h = 0, w = 0;
    auto back = synth::read_ppm((dir / "x.ppm").string(), h, w);
    CHECK(h == 8);
    CHECK(w == 6);
    CHECK(back == img);

    std::vector<std::uint8_t> mask(8 * 6);
    for (auto& v : mask) v = rng.uniform() < 0.5 ? 1 : 0;
    synth::write_pgm((dir / "m.pgm").string(), mask, 8, 6);
    auto mback = synth::read_pgm((dir / "m.pgm").string(), h, w);
    CHECK(mback == mask);
}

TEST_CASE("coordinate features match the closed form") {
    Tensor p = synth::coord_feature(4, 8);
    CHECK(p.shape() == std::vector<int>{4, 8, 8});
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 8; ++j) {
            CHECK(p.at({i, j, 0}) == doctest::Approx(2.0 * j / 8 - 1).epsilon(1e-12));
            CHECK(p.at({i, j, 1}) == doctest::Approx(2.0 * i / 4 - 1).epsilon(1e-12));
            CHECK(p.at({i, j, 2}) == doctest::Approx(2.0 * (j + 1) / 8 - 1).epsilon(1e-12));
            CHECK(p.at({i, j, 3}) == doctest::Approx(2.0 * (i + 1) / 4 - 1).epsilon(1e-12));
            CHECK(p.at({i, j, 4}) ==
                  doctest::Approx((p.at({i, j, 0}) + p.at({i, j, 2})) / 2).epsilon(1e-12));
            CHECK(p.at({i, j, 6}) == doctest::Approx(1.0 / 8).epsilon(1e-12));
            CHECK(p.at({i, j, 7}) == doctest::Approx(1.0 / 4).epsilon(1e-12));
        }
    }
}

TEST_CASE("pyramid: stage shapes follow strides 4, 8, 16, 32") {
    ParameterStore store(21);
    synth::register_encoder(store, "enc", 8, 4);
    Tensor image = Tensor::full({64, 64, 3}, real(0.5));
    auto stages = synth::encode_pyramid(image, store, "enc", 4);
    REQUIRE(stages.size() == 4);
    CHECK(stages[0].shape() == std::vector<int>{16, 16, 8});
    CHECK(stages[1].shape() == std::vector<int>{8, 8, 8});
    CHECK(stages[2].shape() == std::vector<int>{4, 4, 8});
    CHECK(stages[3].shape() == std::vector<int>{2, 2, 8});

    CHECK_THROWS_AS(synth::encode_pyramid(Tensor::full({60, 64, 3}, real(0.1)), store, "enc", 4),
                    DimError);
}

TEST_CASE("constant image: stage features vary only through the coordinate channels") {
    ParameterStore store(22);
    const int c = 6;
    synth::register_encoder(store, "enc", c, 2);
    Tensor image = Tensor::full({32, 32, 3}, real(0.4));
    auto stages = synth::encode_pyramid(image, store, "enc", 2);
    const Tensor& s0 = stages[0];  // 8 x 8 x c

    // For a constant image the patch features are position independent, so the
    // difference between any two cells must equal W_fuse applied to the
    // difference of their coordinate channels.
    Tensor coords = synth::coord_feature(8, 8);
    const auto& wf = store.get("enc.s0.fuse.w").data();  // [(c+8) x c]
    auto diff_expected = [&](int i1, int j1, int i2, int j2, int ch) {
        real acc = 0;
        for (int k = 0; k < 8; ++k) {
            const real dc = coords.at({i1, j1, k}) - coords.at({i2, j2, k});
            acc += dc * wf[static_cast<size_t>((c + k) * c + ch)];
        }
        return acc;
    };
    for (int ch = 0; ch < c; ++ch) {
        const real actual = s0.at({1, 2, ch}) - s0.at({5, 7, ch});
        CHECK(actual == doctest::Approx(diff_expected(1, 2, 5, 7, ch)).epsilon(1e-9));
    }
}

TEST_CASE("expression embedding: zero padding and trainable rows") {
    ParameterStore store(23);
    synth::register_embedding(store, 4);
    Tensor l = synth::embed_expression(store, {synth::token_id("red"), synth::token_id("circle")}, 20);
    CHECK(l.shape() == std::vector<int>{20, 4});
    for (int t = 2; t < 20; ++t)
        for (int j = 0; j < 4; ++j) CHECK(l.at({t, j}) == 0);

    GradTape tape;
    TapeScope scope(tape);
    Tensor l2 = synth::embed_expression(store, {3, 3}, 20);
    Gradients g = backward(sum_all(l2));
    const auto& gt = g.at(store.get("embed.table"));
    for (int row = 0; row < synth::vocab_size(); ++row) {
        const real expected = row == 3 ? real(2) : real(0);
        for (int j = 0; j < 4; ++j) CHECK(gt[static_cast<size_t>(row * 4 + j)] == expected);
    }

    CHECK_THROWS_AS(synth::token_id("no-such-word"), ConfigError);
}

TEST_CASE("vocabulary covers the grammar and stays small") {
    CHECK(synth::vocab_size() >= 20);
    CHECK(synth::vocab_size() <= 28);
    for (const char* w : {"red", "circle", "small", "left", "leftmost", "the", "and"}) {
        CHECK(synth::token_id(w) >= 0);
    }
}

TEST_CASE("the complex split carries verbose relational expressions") {
    synth::GenConfig cfg = small_cfg(29, 30);
    cfg.complex_fraction = 0.5;
    auto ds = synth::generate(cfg);
    auto idx = synth::complex_language_indices(ds);
    CHECK(idx.size() >= 5);
    for (size_t i : idx) {
        const auto& s = ds.samples[i];
        CHECK(s.token_length > 18);
        REQUIRE(s.spec.has_value());
        CHECK(s.spec->rels.size() == 2);
    }
}

TEST_CASE("the small-scale split hits the requested fraction roughly") {
    synth::GenConfig cfg = small_cfg(31, 60);
    cfg.small_fraction = 0.3;
    cfg.complex_fraction = 0.0;
    auto ds = synth::generate(cfg);
    const auto idx = synth::small_scale_indices(ds);
    CHECK(idx.size() >= 10);  // forced fraction plus whatever lands there naturally
}
