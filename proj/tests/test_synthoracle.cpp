#include <gtest/gtest.h>

#include "attnground/extraction.hpp"
#include "attnground/masking.hpp"
#include "attnground/metrics.hpp"
#include "attnground/synthoracle.hpp"

using namespace attnground;

namespace {

double mean_fg_iou(double sigma, uint64_t first_seed, int count) {
    double total = 0;
    for (int i = 0; i < count; ++i) {
        const auto scene = gen_scene(first_seed + uint64_t(i));
        OracleConfig cfg;
        cfg.noise_sigma = sigma;
        const auto map = extract_comb(gen_dump(scene, cfg, OracleRun::gt_run), scene.caption, {}, 0);
        total += iou(gmm_mask(map), scene_ground_truth(scene), IouReading::foreground);
    }
    return total / count;
}

}  // namespace

TEST(Scene, Deterministic) {
    EXPECT_EQ(gen_scene(0), gen_scene(0));
    EXPECT_NE(gen_scene(0), gen_scene(1));
}

TEST(Scene, InvariantSweep) {
    for (uint64_t seed = 0; seed < 1000; ++seed) {
        const auto s = gen_scene(seed);
        ASSERT_GE(s.objects.size(), 1u);
        ASSERT_LE(s.objects.size(), 3u);
        for (size_t i = 0; i < s.objects.size(); ++i) {
            const Box b = s.objects[i].box();
            EXPECT_GE(b.x, 0);
            EXPECT_GE(b.y, 0);
            EXPECT_LE(b.x + b.w, s.canvas);
            EXPECT_LE(b.y + b.h, s.canvas);
            for (size_t j = 0; j < i; ++j) {
                const Box o = s.objects[j].box();
                const bool overlap = b.x < o.x + o.w && o.x < b.x + b.w && b.y < o.y + o.h && o.y < b.y + b.h;
                EXPECT_FALSE(overlap) << "seed " << seed;
            }
            EXPECT_NE(std::find(s.token_object.begin(), s.token_object.end(), int(i)), s.token_object.end());
        }
        EXPECT_NO_THROW(validate_tokens(s.caption));
        EXPECT_EQ(s.caption.size(), kDefaultNMax);
        bool lexical = false, function = false;
        for (const auto& t : s.caption) {
            lexical |= t.is_lexical;
            function |= !t.is_special() && !t.is_lexical;
        }
        EXPECT_TRUE(lexical && function) << "seed " << seed;
    }
}

TEST(Scene, SeedSevenHasAnArticle) {
    const auto s = gen_scene(7);
    EXPECT_TRUE(std::any_of(s.caption.begin(), s.caption.end(),
                            [](const TokenMeta& t) { return !t.is_special() && !t.is_lexical; }));
    EXPECT_NE(s.text().find(" a "), std::string::npos) << s.text();
}

TEST(Scene, JsonRoundTrip) {
    const auto s = gen_scene(42);
    const nlohmann::json j = s;
    EXPECT_EQ(j.get<SceneSpec>(), s);
}

TEST(Scene, GroundTruthScalesWithGrid) {
    const auto s = gen_scene(5);
    const auto g64 = scene_ground_truth(s, 64);
    const auto g32 = scene_ground_truth(s, 32);
    ASSERT_EQ(g64.boxes.size(), g32.boxes.size());
    EXPECT_EQ(g64.boxes[0], s.objects[0].box());
    EXPECT_EQ(g64.category, s.objects[0].word);
    EXPECT_NO_THROW(validate_ground_truth(g32));
}

TEST(OracleDump, ValidAndNormalized) {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        const auto scene = gen_scene(seed);
        OracleConfig cfg;
        cfg.noise_sigma = 0.2;
        cfg.native_resolutions = {64, 32, 16};
        for (auto run : {OracleRun::gt_run, OracleRun::noise_run}) {
            const auto d = gen_dump(scene, cfg, run);
            EXPECT_NO_THROW(d.validate());
            for (size_t t = 0; t < d.n_timesteps(); ++t)
                for (size_t l = 0; l < d.n_layers(); ++l) {
                    const size_t npix = d.layers()[l].pixels();
                    for (size_t p = 0; p < npix; ++p) {
                        double sum = 0;
                        for (size_t k = 0; k < d.n_tokens(); ++k) sum += d.slice(0, t, l, k)[p];
                        ASSERT_NEAR(sum, 1.0, 1e-6);
                    }
                }
        }
    }
}

TEST(OracleDump, FunctionTokensAreNearUniform) {
    const auto scene = gen_scene(3);
    const OracleConfig cfg;
    const auto lay = oracle_layout(scene, cfg);
    std::mt19937_64 rng(0);
    const auto raw = oracle_raw_maps(scene, lay, cfg, OracleRun::gt_run, 64, rng);
    int checked = 0;
    for (size_t k = 0; k < scene.caption.size(); ++k) {
        const auto& t = scene.caption[k];
        if (t.is_special() || t.is_lexical) continue;
        const auto [lo, hi] = std::minmax_element(raw[k].begin(), raw[k].end());
        EXPECT_LT(*hi / *lo, 1.2);
        ++checked;
    }
    EXPECT_GT(checked, 0);
}

TEST(OracleDump, DeterministicPerSeed) {
    const auto scene = gen_scene(9);
    OracleConfig cfg;
    cfg.noise_sigma = 0.1;
    EXPECT_TRUE(gen_dump(scene, cfg, OracleRun::gt_run).same_tensor(gen_dump(scene, cfg, OracleRun::gt_run)));
    EXPECT_FALSE(gen_dump(scene, cfg, OracleRun::gt_run).same_tensor(gen_dump(scene, cfg, OracleRun::noise_run)));
}

TEST(OracleDump, ConfigErrors) {
    const auto scene = gen_scene(1);
    OracleConfig cfg;
    cfg.noise_sigma = -1;
    EXPECT_THROW(gen_dump(scene, cfg, OracleRun::gt_run), ArgumentError);
    cfg = {};
    cfg.comb_corruption = 1.5;
    EXPECT_THROW(gen_dump(scene, cfg, OracleRun::gt_run), ArgumentError);
    cfg = {};
    cfg.native_resolutions = {48};
    EXPECT_THROW(gen_dump(scene, cfg, OracleRun::gt_run), ArgumentError);
    auto broken = scene;
    broken.token_object.pop_back();
    EXPECT_THROW(gen_dump(broken, {}, OracleRun::gt_run), ArgumentError);
}

TEST(OraclePipeline, ZeroNoiseIsPerfectOnEverySample) {
    for (uint64_t seed = 0; seed < 30; ++seed) {
        const auto scene = gen_scene(seed);
        const auto map = extract_comb(gen_dump(scene, {}, OracleRun::gt_run), scene.caption, {}, 0);
        const auto gt = scene_ground_truth(scene);
        EXPECT_GE(iou(gmm_mask(map), gt, IouReading::foreground), 0.95) << "seed " << seed;
        EXPECT_TRUE(top1(map, gt)) << "seed " << seed;
    }
}

TEST(OraclePipeline, NoiseOnlyHurts) {
    double prev = mean_fg_iou(0.0, 500, 30);
    for (double sigma : {0.05, 0.1, 0.2}) {
        const double cur = mean_fg_iou(sigma, 500, 30);
        EXPECT_LE(cur, prev + 0.02) << "sigma " << sigma;
        prev = cur;
    }
}
