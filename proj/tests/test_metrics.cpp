#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "attnground/metrics.hpp"
#include "reference.hpp"

using namespace attnground;

namespace {

struct Instance {
    ActivationMap map;
    BinaryMask mask;
    GroundTruthRegion gt;
};

// Values quantized to 1/8 so ties are common.
Instance random_instance(std::mt19937_64& rng) {
    const int side = 4 + int(rng() % 13);
    Instance in;
    in.gt = ref::random_gt(rng, side);
    in.map = ActivationMap::square(side);
    for (double& v : in.map.values) v = double(rng() % 9) / 8.0;
    in.mask = BinaryMask{side, side, std::vector<uint8_t>(size_t(side) * side), 0.5, false};
    for (auto& b : in.mask.values) b = rng() % 2;
    return in;
}

MetricsRecord record(std::string cat, std::string run, double cnr_v, double iou_v, bool hit) {
    MetricsRecord r;
    r.category = std::move(cat);
    r.run = std::move(run);
    r.cnr = cnr_v;
    r.iou_fg = iou_v;
    r.miou_2class = iou_v / 2;
    r.auc_roc = 0.5 + iou_v / 4;
    r.top1_hit = hit;
    return r;
}

}  // namespace

TEST(Metrics, MatchBruteForceOn200Instances) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const auto in = random_instance(rng);
        const double want_cnr = ref::cnr(in.map, in.gt);
        if (std::isinf(want_cnr)) {
            EXPECT_TRUE(std::isinf(cnr(in.map, in.gt)));
        } else {
            EXPECT_NEAR(cnr(in.map, in.gt), want_cnr, 1e-12 * std::max(1.0, want_cnr)) << trial;
        }
        if (in.mask.count() > 0) {
            EXPECT_EQ(iou(in.mask, in.gt, IouReading::foreground), ref::fg_iou(in.mask, in.gt));
        }
        if (in.mask.count() > 0 && in.mask.count() < in.mask.values.size()) {
            EXPECT_EQ(iou(in.mask, in.gt, IouReading::two_class), ref::two_class_iou(in.mask, in.gt));
        }
        EXPECT_NEAR(auc_roc(in.map, in.gt), ref::auc(in.map, in.gt), 1e-12) << trial;
        EXPECT_EQ(top1(in.map, in.gt), ref::top1(in.map, in.gt)) << trial;
    }
}

TEST(Metrics, CnrAffineInvariance) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.1, 5.0);
    for (int trial = 0; trial < 200; ++trial) {
        auto in = random_instance(rng);
        for (double& v : in.map.values) v += 1e-3 * double(rng() % 100);  // break exact-constant regions
        auto t = in.map;
        const double a = u(rng), b = u(rng) - 2.5;
        for (double& v : t.values) v = a * v + b;
        EXPECT_NEAR(cnr(t, in.gt), cnr(in.map, in.gt), 1e-9) << trial;
    }
}

TEST(Metrics, AucMonotoneInvariance) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const auto in = random_instance(rng);
        auto t = in.map;
        for (double& v : t.values) v = std::exp(3.0 * v) - 7.0;
        EXPECT_EQ(auc_roc(t, in.gt), auc_roc(in.map, in.gt)) << trial;
    }
}

TEST(Metrics, KnownValues) {
    GroundTruthRegion gt{4, {{0, 0, 2, 2}}, "c"};
    ActivationMap m = ActivationMap::square(4, 0.0);
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) m(r, c) = 1.0;
    EXPECT_TRUE(std::isinf(cnr(m, gt)));
    EXPECT_TRUE(cnr_detailed(m, gt).degenerate);
    EXPECT_EQ(auc_roc(m, gt), 1.0);
    EXPECT_EQ(cnr(ActivationMap::square(4, 0.3), gt), 0.0);
    EXPECT_EQ(auc_roc(ActivationMap::square(4, 0.3), gt), 0.5);

    BinaryMask exact{4, 4, std::vector<uint8_t>(16, 0), 0.5, false};
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) exact.values[size_t(r) * 4 + c] = 1;
    EXPECT_EQ(iou(exact, gt, IouReading::foreground), 1.0);
    EXPECT_EQ(iou(exact, gt, IouReading::two_class), 1.0);

    BinaryMask empty{4, 4, std::vector<uint8_t>(16, 0), 0.5, true};
    EXPECT_EQ(iou(empty, gt, IouReading::foreground), 0.0);
    EXPECT_EQ(iou(empty, gt, IouReading::two_class), 0.5 * (0.0 + 12.0 / 16.0));

    GroundTruthRegion two{4, {{0, 0, 1, 1}, {3, 3, 1, 1}}, "c"};
    ActivationMap peak = ActivationMap::square(4, 0.0);
    peak(3, 3) = 1.0;
    EXPECT_TRUE(top1(peak, two));
    peak(1, 1) = 1.0;  // tie: first in row-major order wins
    const auto t = top1_detailed(peak, two);
    EXPECT_FALSE(t.hit);
    EXPECT_TRUE(t.tie);
}

TEST(Metrics, Errors) {
    GroundTruthRegion gt{8, {{0, 0, 2, 2}}, "c"};
    EXPECT_THROW(cnr(ActivationMap::square(4), gt), ArgumentError);
    GroundTruthRegion full{4, {{0, 0, 4, 4}}, "c"};
    EXPECT_THROW(cnr(ActivationMap::square(4), full), ArgumentError);
    EXPECT_THROW(auc_roc(ActivationMap::square(4), full), ArgumentError);
    EXPECT_THROW(parse_iou_reading("dice"), ArgumentError);
}

TEST(Report, SingleRecordIsReproducedVerbatim) {
    auto r = record("disk", "0", 1.2345678901234567, 0.3333333333333333, true);
    r.miou_2class = 0.61;
    r.auc_roc = 0.8765;
    const auto rep = aggregate({r});
    ASSERT_EQ(rep.categories.size(), 1u);
    const auto& m = rep.categories[0].metrics;
    EXPECT_EQ(m.cnr.mean, r.cnr);
    EXPECT_EQ(m.iou_fg.mean, r.iou_fg);
    EXPECT_EQ(m.miou_2class.mean, r.miou_2class);
    EXPECT_EQ(m.auc_roc.mean, r.auc_roc);
    EXPECT_EQ(m.top1.mean, 1.0);
    EXPECT_EQ(m.cnr.std, 0.0);

    std::ostringstream csv;
    write_report_csv(csv, rep);
    std::istringstream lines(csv.str());
    std::string header, row, weighted;
    std::getline(lines, header);
    std::getline(lines, row);
    std::getline(lines, weighted);
    EXPECT_EQ(header, "category,n,cnr_mean,cnr_std,iou_fg_mean,miou2_mean,auc_mean,top1_rate");
    EXPECT_EQ(row, "disk,1,1.2345678901234567,0,0.33333333333333331,0.60999999999999999,0.87649999999999995,1");
    EXPECT_EQ(weighted.substr(0, 15), "weighted_avg,1,");
}

TEST(Report, RunsAndWeightedAverage) {
    std::vector<MetricsRecord> recs{
        record("a", "r0", 1.0, 0.2, true),  record("a", "r0", 3.0, 0.4, false),
        record("b", "r0", 5.0, 0.9, true),  record("a", "r1", 2.0, 0.3, true),
        record("a", "r1", 2.0, 0.5, true),  record("b", "r1", 7.0, 0.7, false),
    };
    const auto rep = aggregate(recs);
    ASSERT_EQ(rep.categories.size(), 2u);
    const auto& a = rep.categories[0];
    EXPECT_EQ(a.category, "a");
    EXPECT_EQ(a.n, 2u);
    // run means: r0 = 2.0, r1 = 2.0
    EXPECT_DOUBLE_EQ(a.metrics.cnr.mean, 2.0);
    EXPECT_DOUBLE_EQ(a.metrics.cnr.std, 0.0);
    EXPECT_DOUBLE_EQ(a.metrics.top1.mean, 0.75);
    const auto& b = rep.categories[1];
    EXPECT_DOUBLE_EQ(b.metrics.cnr.mean, 6.0);
    EXPECT_DOUBLE_EQ(b.metrics.cnr.std, std::sqrt(2.0));
    // weighted: r0 mean over 3 samples = 3, r1 = 11/3
    EXPECT_DOUBLE_EQ(rep.weighted.metrics.cnr.mean, 0.5 * (3.0 + 11.0 / 3.0));
    EXPECT_EQ(rep.weighted.n, 3u);
    EXPECT_EQ(rep.runs, (std::vector<std::string>{"r0", "r1"}));
    EXPECT_THROW(aggregate({}), ArgumentError);
}

TEST(Report, RecordJsonRoundTrip) {
    auto r = record("disk", "7", std::numeric_limits<double>::infinity(), 0.25, false);
    r.sample_id = "scene-3";
    r.cnr_degenerate = true;
    r.token_fallback = true;
    const nlohmann::json j = r;
    EXPECT_EQ(j["cnr"], "inf");
    const auto back = j.get<MetricsRecord>();
    EXPECT_TRUE(std::isinf(back.cnr));
    EXPECT_EQ(back.sample_id, "scene-3");
    EXPECT_TRUE(back.cnr_degenerate);
    EXPECT_TRUE(back.token_fallback);
    EXPECT_EQ(back.iou_fg, 0.25);
}
