#include <random>

#include <gtest/gtest.h>

#include "attnground/masking.hpp"
#include "attnground/metrics.hpp"

using namespace attnground;

namespace {

std::vector<double> bimodal(std::mt19937_64& rng, size_t n0, double m0, double s0, size_t n1, double m1, double s1) {
    std::normal_distribution<double> a(m0, s0), b(m1, s1);
    std::vector<double> v;
    for (size_t i = 0; i < n0; ++i) v.push_back(a(rng));
    for (size_t i = 0; i < n1; ++i) v.push_back(b(rng));
    std::shuffle(v.begin(), v.end(), rng);
    return v;
}

}  // namespace

TEST(Gmm, LogLikelihoodNeverDecreases) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        std::uniform_real_distribution<double> u(0, 1);
        auto v = bimodal(rng, 100 + rng() % 500, u(rng), 0.02 + 0.2 * u(rng), 20 + rng() % 300, u(rng),
                         0.02 + 0.2 * u(rng));
        const auto fit = fit_gmm(v);
        for (size_t i = 1; i < fit.log_likelihood.size(); ++i)
            EXPECT_GE(fit.log_likelihood[i], fit.log_likelihood[i - 1] - 1e-9) << "trial " << trial << " step " << i;
    }
}

TEST(Gmm, SeparatedClustersThresholdNearMidpoint) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        std::uniform_real_distribution<double> u(0.1, 0.4);
        const double lo = u(rng), hi = lo + 0.4 + 0.2 * (u(rng) - 0.1);
        auto v = bimodal(rng, 600, lo, 0.04, 600, hi, 0.04);
        const auto fit = fit_gmm(v);
        EXPECT_TRUE(fit.converged);
        EXPECT_NEAR(posterior_threshold(fit), 0.5 * (lo + hi), 0.05) << "trial " << trial;
        EXPECT_NEAR(fit.components[fit.foreground].mean, hi, 0.02);
    }
}

TEST(Gmm, RecoversMixtureParameters) {
    std::mt19937_64 rng(3);
    auto v = bimodal(rng, 3000, 0.2, 0.05, 1000, 0.7, 0.1);
    const auto fit = fit_gmm(v);
    const auto& fg = fit.components[fit.foreground];
    const auto& bg = fit.components[1 - fit.foreground];
    EXPECT_NEAR(bg.mean, 0.2, 0.01);
    EXPECT_NEAR(fg.mean, 0.7, 0.01);
    EXPECT_NEAR(std::sqrt(bg.variance), 0.05, 0.01);
    EXPECT_NEAR(std::sqrt(fg.variance), 0.1, 0.01);
    EXPECT_NEAR(fg.weight, 0.25, 0.02);
}

TEST(Gmm, DeterministicAndDegenerateInputs) {
    std::mt19937_64 rng(4);
    auto v = bimodal(rng, 200, 0.1, 0.05, 200, 0.9, 0.05);
    const auto a = fit_gmm(v, {}, 1), b = fit_gmm(v, {}, 2);
    EXPECT_EQ(a.log_likelihood, b.log_likelihood);
    EXPECT_THROW(fit_gmm(std::vector<double>(10, 0.3)), DegenerateInputError);
    EXPECT_THROW(fit_gmm(std::vector<double>{0.1, NAN}), ArgumentError);

    // Two distinct values: components sit on them, variances on the floor.
    std::vector<double> two(50, 0.0);
    std::fill(two.begin() + 30, two.end(), 1.0);
    const auto f = fit_gmm(two);
    EXPECT_NEAR(f.components[f.foreground].mean, 1.0, 1e-9);
    EXPECT_NEAR(f.components[f.foreground].variance, GmmOptions{}.variance_floor, 1e-12);
}

TEST(Mask, PlantedDiskOnBackground) {
    ActivationMap m = ActivationMap::square(64, 0.1);
    GroundTruthRegion disk_region{64, {}, "disk"};
    std::vector<uint8_t> disk(64 * 64, 0);
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c)
            if ((r - 30.5) * (r - 30.5) + (c - 20.5) * (c - 20.5) <= 100) {
                m(r, c) = 0.9;
                disk[size_t(r) * 64 + c] = 1;
            }
    const auto mask = gmm_mask(m);
    EXPECT_FALSE(mask.degenerate);
    EXPECT_GE(jaccard(mask.values, disk), 0.99);
}

TEST(Mask, ConstantMapIsEmptyAndFlagged) {
    const auto mask = gmm_mask(ActivationMap::square(8, 0.0));
    EXPECT_TRUE(mask.degenerate);
    EXPECT_EQ(mask.count(), 0u);
}

TEST(Mask, ThresholdIgnoresFarTail) {
    // Wide background, narrow foreground: a raw posterior test would also claim the low tail.
    std::mt19937_64 rng(5);
    auto v = bimodal(rng, 3000, 0.4, 0.15, 300, 0.8, 0.01);
    ActivationMap m(1, int(v.size()));
    m.values = v;
    GmmFit fit;
    const auto mask = gmm_mask(m, {}, &fit);
    EXPECT_GT(mask.threshold, 0.5);
    for (size_t i = 0; i < v.size(); ++i) {
        if (v[i] < 0.4) {
            EXPECT_EQ(mask.values[i], 0);
        }
    }
    const double t = mask.threshold;
    EXPECT_NEAR(foreground_posterior(fit, t), 0.5, 1e-6);
}
