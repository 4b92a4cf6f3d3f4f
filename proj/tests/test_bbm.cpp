#include <random>

#include <gtest/gtest.h>

#include "attnground/bbm.hpp"
#include "attnground/metrics.hpp"
#include "attnground/synthoracle.hpp"
#include "reference.hpp"

using namespace attnground;

namespace {

constexpr MergeVariant kVariants[] = {MergeVariant::linear, MergeVariant::quadratic, MergeVariant::mixture};

ActivationMap scalar(double v) { return ActivationMap(1, 1, v); }

}  // namespace

TEST(Merge, EndpointsAreExact) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const auto comb = ref::random_map(rng, 12, 12), mult = ref::random_map(rng, 12, 12);
        for (auto v : kVariants) {
            const auto at0 = merge_unnormalized(comb, mult, 0.0, v);
            const auto at1 = merge_unnormalized(comb, mult, 1.0, v);
            for (size_t i = 0; i < comb.size(); ++i) {
                EXPECT_NEAR(at0.values[i], comb.values[i], 1e-12);
                EXPECT_NEAR(at1.values[i], mult.values[i], 1e-12);
            }
        }
    }
}

TEST(Merge, ScalarValues) {
    const auto mix = merge_unnormalized(scalar(0.4), scalar(0.8), 0.5, MergeVariant::mixture);
    EXPECT_NEAR(mix.values[0], 0.68, 1e-12);
    // Direct evaluation of the other two curves at the same point.
    EXPECT_NEAR(merge_unnormalized(scalar(0.4), scalar(0.8), 0.5, MergeVariant::linear).values[0], 0.6, 1e-12);
    EXPECT_NEAR(merge_unnormalized(scalar(0.4), scalar(0.8), 0.5, MergeVariant::quadratic).values[0],
                0.5 * 0.32 + 0.25 * 0.4 + 0.25 * 0.8, 1e-12);
    EXPECT_NEAR(merge_unnormalized(scalar(0.4), scalar(0.8), 0.25, MergeVariant::linear).values[0], 0.5, 1e-12);
}

TEST(Merge, OutputIsRenormalized) {
    std::mt19937_64 rng(2);
    const auto comb = ref::random_map(rng, 8, 8), mult = ref::random_map(rng, 8, 8);
    for (auto v : kVariants) {
        const auto m = merge(comb, mult, 0.3, v);
        EXPECT_DOUBLE_EQ(m.min(), 0.0);
        EXPECT_DOUBLE_EQ(m.max(), 1.0);
        EXPECT_EQ(m.provenance, Provenance::bbm);
    }
}

TEST(Merge, Errors) {
    EXPECT_THROW(merge(scalar(0.1), scalar(0.2), 1.5, MergeVariant::linear), ArgumentError);
    EXPECT_THROW(merge(scalar(0.1), scalar(0.2), -0.1, MergeVariant::linear), ArgumentError);
    EXPECT_THROW(merge(ActivationMap(2, 2), ActivationMap(3, 3), 0.5, MergeVariant::linear), ArgumentError);
    EXPECT_THROW(parse_merge_variant("cubic"), ArgumentError);
}

TEST(Ssim, IdentitySymmetryAndBruteForce) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const auto a = ref::random_map(rng, 16, 16), b = ref::random_map(rng, 16, 16);
        EXPECT_NEAR(ssim_unclipped(a, a), 1.0, 1e-9);
        EXPECT_NEAR(ssim_unclipped(a, b), ssim_unclipped(b, a), 1e-12);
        EXPECT_NEAR(ssim_unclipped(a, b), ref::ssim(a, b), 1e-9);
    }
}

TEST(Ssim, ClippingAndErrors) {
    ActivationMap a(8, 8), b(8, 8);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) {
            a(r, c) = double((r + c) % 2);
            b(r, c) = 1.0 - a(r, c);
        }
    EXPECT_LT(ssim_unclipped(a, b), 0.0);
    EXPECT_EQ(ssim(a, b), 0.0);
    EXPECT_THROW(ssim(ActivationMap(4, 4), ActivationMap(4, 4)), ArgumentError);
    EXPECT_THROW(ssim(ActivationMap(8, 8), ActivationMap(8, 9)), ArgumentError);
}

TEST(BiasInteraction, MatchesTripleLoop) {
    std::mt19937_64 rng(4);
    const auto img = ref::random_map(rng, 9, 9), txt = ref::random_map(rng, 9, 9);
    ActivationMap want(9, 9);
    for (int i = 0; i < 9; ++i)
        for (int j = 0; j < 9; ++j)
            for (int k = 0; k < 9; ++k) want(i, j) += img(i, k) * txt(k, j);
    normalize_in_place(want);
    const auto got = bias_interaction(img, txt);
    for (size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got.values[i], want.values[i], 1e-12);
    EXPECT_THROW(bias_interaction(ActivationMap(3, 4), ActivationMap(3, 4)), ArgumentError);
}

TEST(Bbm, AlignedCorruptedScenarioImprovesCnr) {
    int wins = 0;
    for (uint64_t seed = 0; seed < 30; ++seed) {
        const auto scene = gen_scene(2000 + seed);
        OracleConfig cfg;
        cfg.comb_corruption = 0.5;
        const auto r = run_bbm(gen_dump(scene, cfg, OracleRun::gt_run), gen_dump(scene, cfg, OracleRun::noise_run),
                               scene.caption, {}, 0, MergeVariant::mixture);
        const auto gt = scene_ground_truth(scene);
        EXPECT_GT(r.s, 0.0);
        wins += cnr(r.p_bbm, gt) > cnr(r.p_comb, gt);
    }
    EXPECT_GE(wins, 24);
}

TEST(Bbm, AntiCorrelatedScenarioLeavesMapAlone) {
    for (uint64_t seed = 0; seed < 30; ++seed) {
        const auto scene = gen_scene(3000 + seed);
        OracleConfig cfg;
        cfg.comb_corruption = 0.5;
        cfg.bias_alignment = BiasAlignment::anti_correlated;
        const auto r = run_bbm(gen_dump(scene, cfg, OracleRun::gt_run), gen_dump(scene, cfg, OracleRun::noise_run),
                               scene.caption, {}, 0, MergeVariant::mixture);
        EXPECT_LT(r.s, 0.2) << "seed " << seed;
        double worst = 0;
        for (size_t i = 0; i < r.p_bbm.size(); ++i) worst = std::max(worst, std::abs(r.p_bbm.values[i] - r.p_comb.values[i]));
        EXPECT_LT(worst, 0.3) << "seed " << seed;
    }
}
