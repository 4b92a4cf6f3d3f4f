#include <random>

#include <gtest/gtest.h>

#include "attnground/bbm.hpp"
#include "attnground/extraction.hpp"
#include "attnground/synthoracle.hpp"
#include "fixtures.hpp"

using namespace attnground;
using namespace fixtures;

namespace {

std::vector<TokenMeta> simple_tokens(uint32_t n) {
    std::vector<TokenMeta> t{start_tok()};
    for (uint32_t i = 1; i + 1 < n; ++i) t.push_back(tok("w", i % 2 == 1));
    t.push_back(end_tok());
    return t;
}

int argmax(const ActivationMap& m) {
    return int(std::max_element(m.values.begin(), m.values.end()) - m.values.begin());
}

}  // namespace

TEST(Upsample, NearestReplicatesBlocks) {
    const std::vector<float> src{1, 2, 3, 4};
    const auto up = upsample(std::span<const float>(src), 2, 2, 4, UpsampleMode::nearest);
    const std::vector<double> want{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
    EXPECT_EQ(up, want);
}

TEST(Upsample, BilinearHalfPixelCenters) {
    const std::vector<double> src{0, 1};  // 1 x 2
    const auto up = upsample(std::span<const double>(src), 1, 2, 4, UpsampleMode::bilinear);
    // Destination centers map to source x = -0.25, 0.25, 0.75, 1.25 -> clamped to [0, 1].
    const std::vector<double> row{0, 0.25, 0.75, 1};
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(up[size_t(r) * 4 + c], row[c]);
}

TEST(Upsample, IdentityAndConstants) {
    std::mt19937_64 rng(1);
    std::vector<double> src(36);
    for (auto& v : src) v = double(rng() % 1000) / 1000.0;
    for (auto mode : {UpsampleMode::nearest, UpsampleMode::bilinear})
        EXPECT_EQ(upsample(std::span<const double>(src), 6, 6, 6, mode), src);
    std::vector<double> flat(16, 0.375);
    for (double v : upsample(std::span<const double>(flat), 4, 4, 64, UpsampleMode::bilinear)) EXPECT_EQ(v, 0.375);
}

TEST(Upsample, RejectsDownsampling) {
    std::vector<double> src(64, 0.0);
    EXPECT_THROW(upsample(std::span<const double>(src), 8, 8, 4, UpsampleMode::bilinear), ArgumentError);
}

// Summing at native resolution before upsampling must agree with the literal
// definition: upsample every slice, then average.
TEST(Extraction, MatchesPerSliceDefinition) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        auto d = random_dump(rng, 2, {30, 20, 10}, {{0, 8, 8, 8}, {1, 4, 4, 4}, {2, 2, 2, 2}}, 6);
        const std::vector<size_t> toks{1, 3, 4};
        for (auto mode : {UpsampleMode::nearest, UpsampleMode::bilinear}) {
            ExtractionSpec spec;
            spec.upsample_target = 16;
            spec.upsample_mode = mode;
            spec.normalize = false;
            const auto got = extract_tokens(d, toks, spec, 1, Provenance::comb);
            std::vector<double> want(256, 0.0);
            for (size_t t = 0; t < 3; ++t)
                for (size_t l = 0; l < 3; ++l)
                    for (size_t k : toks) {
                        const auto& li = d.layers()[l];
                        const auto up = upsample<float>(d.slice(1, t, l, k), int(li.height), int(li.width), 16, mode);
                        for (size_t p = 0; p < 256; ++p) want[p] += up[p] / 27.0;
                    }
            for (size_t p = 0; p < 256; ++p) EXPECT_NEAR(got.values[p], want[p], 1e-12);
        }
    }
}

TEST(Extraction, NormalizedRange) {
    std::mt19937_64 rng(3);
    auto d = random_dump(rng, 1, {1, 0}, {{0, 4, 4, 4}}, 5);
    const auto m = extract_comb(d, simple_tokens(5), {}, 0);
    EXPECT_EQ(m.rows, 64);
    EXPECT_DOUBLE_EQ(m.min(), 0.0);
    EXPECT_DOUBLE_EQ(m.max(), 1.0);
}

TEST(Extraction, TimestepPolicies) {
    AttentionDump d(1, {40, 30, 20, 10}, {{0, 1, 1, 1}}, 2);
    // Token 1 carries the timestep position so the mean identifies which steps were used.
    for (size_t t = 0; t < 4; ++t) {
        d.slice(0, t, 0, 1)[0] = float(t) / 10.0f;
        d.slice(0, t, 0, 0)[0] = 1.0f - float(t) / 10.0f;
    }
    ExtractionSpec spec;
    spec.upsample_target = 1;
    spec.normalize = false;
    const std::vector<size_t> tok{1};
    spec.timesteps = LastTimesteps{2};
    EXPECT_NEAR(extract_tokens(d, tok, spec, 0, Provenance::comb).values[0], 0.25, 1e-7);
    spec.timesteps = TimestepSet{{40, 10}};
    EXPECT_NEAR(extract_tokens(d, tok, spec, 0, Provenance::comb).values[0], 0.15, 1e-7);
    spec.timesteps = LastTimesteps{5};
    EXPECT_THROW(extract_tokens(d, tok, spec, 0, Provenance::comb), ArgumentError);
    spec.timesteps = TimestepSet{{41}};
    EXPECT_THROW(extract_tokens(d, tok, spec, 0, Provenance::comb), ArgumentError);
}

TEST(Extraction, LayerPolicies) {
    AttentionDump d(1, {0}, {{0, 1, 1, 1}, {5, 1, 1, 1}, {7, 1, 1, 2}}, 2);
    const float v[3] = {0.2f, 0.4f, 0.9f};
    for (size_t l = 0; l < 3; ++l) {
        d.slice(0, 0, l, 1)[0] = v[l];
        d.slice(0, 0, l, 0)[0] = 1.0f - v[l];
    }
    ExtractionSpec spec;
    spec.upsample_target = 1;
    spec.normalize = false;
    const std::vector<size_t> tok{1};
    spec.layers = LayerSet{{5}};
    EXPECT_NEAR(extract_tokens(d, tok, spec, 0, Provenance::comb).values[0], 0.4, 1e-7);
    spec.layers = ResolutionLevels{{1}};
    EXPECT_NEAR(extract_tokens(d, tok, spec, 0, Provenance::comb).values[0], 0.3, 1e-7);
    spec.layers = LayerSet{{3}};
    EXPECT_THROW(extract_tokens(d, tok, spec, 0, Provenance::comb), ArgumentError);
    spec.layers = ResolutionLevels{{9}};
    EXPECT_THROW(extract_tokens(d, tok, spec, 0, Provenance::comb), DegenerateInputError);
}

TEST(Extraction, Errors) {
    std::mt19937_64 rng(4);
    auto d = random_dump(rng, 1, {0}, {{0, 8, 8, 8}}, 4);
    ExtractionSpec spec;
    spec.upsample_target = 4;
    EXPECT_THROW(extract_comb(d, simple_tokens(4), spec, 0), ArgumentError);
    spec.upsample_target = 64;
    EXPECT_THROW(extract_comb(d, simple_tokens(5), spec, 0), ArgumentError);
    EXPECT_THROW(extract_comb(d, simple_tokens(4), spec, 1), ArgumentError);
}

TEST(Extraction, OraclePeakInsidePlantedObject) {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        SceneOptions so;
        so.max_objects = 1;
        const auto scene = gen_scene(seed, so);
        const auto dump = gen_dump(scene, {}, OracleRun::gt_run);
        for (size_t k = 0; k < scene.caption.size(); ++k) {
            if (!scene.caption[k].is_lexical) continue;
            const std::vector<size_t> tok{k};
            const auto m = extract_tokens(dump, tok, {}, 0, Provenance::comb);
            const int i = argmax(m);
            EXPECT_TRUE(scene.objects[0].box().contains(i / 64, i % 64)) << "seed " << seed << " token " << k;
        }
        const auto img = extract_img_bias(dump, {}, 0);
        const int i = argmax(img);
        EXPECT_TRUE(scene.objects[0].box().contains(i / 64, i % 64)) << "image bias, seed " << seed;
    }
}

TEST(Extraction, EndTokenResemblesLexicalMean) {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        const auto scene = gen_scene(seed);
        OracleConfig cfg;
        cfg.noise_sigma = 0.05;
        const auto dump = gen_dump(scene, cfg, OracleRun::gt_run);
        ExtractionSpec spec;
        const auto lex = extract_comb(dump, scene.caption, spec, 0);
        spec.token_mode = TokenMode::end_token;
        const auto end = extract_comb(dump, scene.caption, spec, 0);
        EXPECT_GE(ssim(lex, end), 0.9) << "seed " << seed;
    }
}
