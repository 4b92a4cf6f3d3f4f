#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnground/activation_map.hpp"
#include "attnground/attnstore.hpp"
#include "attnground/errors.hpp"
#include "attnground/masking.hpp"

namespace attnground {

// Pixel membership of the box union on a map of the ground truth's grid.
inline std::vector<uint8_t> interior_mask(const GroundTruthRegion& gt, int rows, int cols) {
    if (rows != gt.grid || cols != gt.grid)
        throw ArgumentError("metrics: map is " + std::to_string(rows) + "x" + std::to_string(cols) +
                            " but ground truth lives on a " + std::to_string(gt.grid) + " grid");
    std::vector<uint8_t> in(size_t(rows) * cols, 0);
    for (const auto& b : gt.boxes)
        for (int r = std::max(0, b.y); r < std::min(rows, b.y + b.h); ++r)
            for (int c = std::max(0, b.x); c < std::min(cols, b.x + b.w); ++c) in[size_t(r) * cols + c] = 1;
    return in;
}

struct CnrResult {
    double value = 0.0;
    bool degenerate = false;  // both regions have (near) zero variance
};

// |mu_in - mu_out| / sqrt(var_in + var_out) with population variances.
inline CnrResult cnr_detailed(const ActivationMap& map, const GroundTruthRegion& gt) {
    const auto in = interior_mask(gt, map.rows, map.cols);
    double s_in = 0, s_out = 0;
    size_t n_in = 0, n_out = 0;
    for (size_t i = 0; i < map.size(); ++i) {
        if (in[i]) {
            s_in += map.values[i];
            ++n_in;
        } else {
            s_out += map.values[i];
            ++n_out;
        }
    }
    if (n_in == 0) throw ArgumentError("cnr: ground-truth interior is empty");
    if (n_out == 0) throw ArgumentError("cnr: ground truth covers the whole grid (empty exterior)");
    const double m_in = s_in / double(n_in), m_out = s_out / double(n_out);
    double v_in = 0, v_out = 0;
    for (size_t i = 0; i < map.size(); ++i) {
        const double d = map.values[i] - (in[i] ? m_in : m_out);
        (in[i] ? v_in : v_out) += d * d;
    }
    v_in /= double(n_in);
    v_out /= double(n_out);
    const double diff = std::abs(m_in - m_out);
    if (v_in + v_out < 1e-12) {
        // Summation rounding can leave a residue between equal means; treat it as zero.
        const bool equal = diff <= 1e-12 * std::max({1.0, std::abs(m_in), std::abs(m_out)});
        return {equal ? 0.0 : std::numeric_limits<double>::infinity(), true};
    }
    return {diff / std::sqrt(v_in + v_out), false};
}

inline double cnr(const ActivationMap& map, const GroundTruthRegion& gt) { return cnr_detailed(map, gt).value; }

enum class IouReading { foreground, two_class };

inline std::string_view to_string(IouReading r) { return r == IouReading::foreground ? "fg" : "two-class"; }

inline IouReading parse_iou_reading(std::string_view s) {
    if (s == "fg" || s == "foreground") return IouReading::foreground;
    if (s == "two-class" || s == "two_class" || s == "2class") return IouReading::two_class;
    throw ArgumentError("unknown IoU reading '" + std::string(s) + "'");
}

// Jaccard index of two equally sized pixel sets; nullopt-like NaN when both are empty.
inline double jaccard(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        inter += (a[i] && b[i]);
        uni += (a[i] || b[i]);
    }
    return uni == 0 ? std::numeric_limits<double>::quiet_NaN() : double(inter) / double(uni);
}

// fg: Jaccard of mask vs box union. two-class: mean of the foreground Jaccard and
// the Jaccard of the complements.
inline double iou(const BinaryMask& mask, const GroundTruthRegion& gt, IouReading reading = IouReading::two_class) {
    const auto in = interior_mask(gt, mask.rows, mask.cols);
    const double fg = jaccard(mask.values, in);
    if (reading == IouReading::foreground) {
        if (std::isnan(fg)) throw ArgumentError("iou: mask and ground truth are both empty");
        return fg;
    }
    std::vector<uint8_t> mask_c(mask.values.size()), in_c(in.size());
    for (size_t i = 0; i < in.size(); ++i) {
        mask_c[i] = !mask.values[i];
        in_c[i] = !in[i];
    }
    const double bg = jaccard(mask_c, in_c);
    if (std::isnan(fg) || std::isnan(bg)) throw ArgumentError("iou: undefined for an empty set pair");
    return 0.5 * (fg + bg);
}

// Probability that a random interior pixel outscores a random exterior pixel, ties count 1/2.
inline double auc_roc(const ActivationMap& map, const GroundTruthRegion& gt) {
    const auto in = interior_mask(gt, map.rows, map.cols);
    std::vector<std::pair<double, uint8_t>> scored(map.size());
    size_t n_pos = 0;
    for (size_t i = 0; i < map.size(); ++i) {
        scored[i] = {map.values[i], in[i]};
        n_pos += in[i];
    }
    const size_t n_neg = map.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw ArgumentError("auc: interior and exterior must both be nonempty");
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    // Mann-Whitney U via midranks.
    double rank_sum = 0.0;
    for (size_t i = 0; i < scored.size();) {
        size_t j = i;
        while (j < scored.size() && scored[j].first == scored[i].first) ++j;
        const double midrank = 0.5 * double(i + 1 + j);  // average of ranks i+1 .. j
        for (size_t k = i; k < j; ++k)
            if (scored[k].second) rank_sum += midrank;
        i = j;
    }
    const double u = rank_sum - double(n_pos) * double(n_pos + 1) / 2.0;
    return u / (double(n_pos) * double(n_neg));
}

struct Top1Result {
    bool hit = false;
    bool tie = false;  // several pixels share the global maximum
    int row = 0;
    int col = 0;
};

// Argmax (first in row-major order) inside a box?
inline Top1Result top1_detailed(const ActivationMap& map, const GroundTruthRegion& gt) {
    if (map.values.empty()) throw ArgumentError("top1: empty map");
    const auto in = interior_mask(gt, map.rows, map.cols);
    size_t best = 0;
    size_t ties = 1;
    for (size_t i = 1; i < map.size(); ++i) {
        if (map.values[i] > map.values[best]) {
            best = i;
            ties = 1;
        } else if (map.values[i] == map.values[best]) {
            ++ties;
        }
    }
    return {in[best] != 0, ties > 1, int(best / map.cols), int(best % map.cols)};
}

inline bool top1(const ActivationMap& map, const GroundTruthRegion& gt) { return top1_detailed(map, gt).hit; }

// ---------------------------------------------------------------------------
// Records and reports

struct MetricsRecord {
    std::string sample_id;
    std::string category;
    std::string run = "0";
    double cnr = 0.0;
    double iou_fg = 0.0;
    double miou_2class = 0.0;
    double auc_roc = 0.5;
    bool top1_hit = false;
    bool cnr_degenerate = false;
    bool mask_degenerate = false;
    bool top1_tie = false;
    bool token_fallback = false;
};

inline MetricsRecord evaluate(const ActivationMap& map, const BinaryMask& mask, const GroundTruthRegion& gt,
                              std::string sample_id = {}, std::string run = "0") {
    MetricsRecord r;
    r.sample_id = std::move(sample_id);
    r.category = gt.category;
    r.run = std::move(run);
    const auto c = cnr_detailed(map, gt);
    r.cnr = c.value;
    r.cnr_degenerate = c.degenerate;
    r.iou_fg = iou(mask, gt, IouReading::foreground);
    r.miou_2class = iou(mask, gt, IouReading::two_class);
    r.auc_roc = auc_roc(map, gt);
    const auto t = top1_detailed(map, gt);
    r.top1_hit = t.hit;
    r.top1_tie = t.tie;
    r.mask_degenerate = mask.degenerate;
    return r;
}

inline void to_json(nlohmann::json& j, const MetricsRecord& r) {
    j = {{"sample_id", r.sample_id},
         {"category", r.category},
         {"run", r.run},
         {"cnr", r.cnr},
         {"iou_fg", r.iou_fg},
         {"miou_2class", r.miou_2class},
         {"auc_roc", r.auc_roc},
         {"top1_hit", r.top1_hit},
         {"flags",
          {{"cnr_degenerate", r.cnr_degenerate},
           {"mask_degenerate", r.mask_degenerate},
           {"top1_tie", r.top1_tie},
           {"token_fallback", r.token_fallback}}}};
    // JSON has no infinity; degenerate CNR is carried as a string.
    if (std::isinf(r.cnr)) j["cnr"] = "inf";
}

inline void from_json(const nlohmann::json& j, MetricsRecord& r) {
    r.sample_id = j.value("sample_id", std::string{});
    r.category = j.at("category").get<std::string>();
    r.run = j.value("run", std::string("0"));
    if (j.at("cnr").is_string())
        r.cnr = std::numeric_limits<double>::infinity();
    else
        r.cnr = j.at("cnr").get<double>();
    r.iou_fg = j.at("iou_fg").get<double>();
    r.miou_2class = j.at("miou_2class").get<double>();
    r.auc_roc = j.at("auc_roc").get<double>();
    r.top1_hit = j.at("top1_hit").get<bool>();
    if (j.contains("flags")) {
        const auto& f = j["flags"];
        r.cnr_degenerate = f.value("cnr_degenerate", false);
        r.mask_degenerate = f.value("mask_degenerate", false);
        r.top1_tie = f.value("top1_tie", false);
        r.token_fallback = f.value("token_fallback", false);
    }
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // sample std across runs (n - 1); 0 for a single run
};

struct MetricSummary {
    MeanStd cnr, iou_fg, miou_2class, auc_roc, top1;
};

struct CategoryRow {
    std::string category;
    size_t n = 0;  // samples per run (mean over runs when runs differ)
    MetricSummary metrics;
};

struct GroundingReport {
    std::vector<CategoryRow> categories;
    CategoryRow weighted;  // category = "weighted_avg"
    std::vector<std::string> runs;
    std::vector<std::string> warnings;
};

namespace detail {

struct Sums {
    double cnr = 0, iou_fg = 0, miou = 0, auc = 0, top1 = 0;
    size_t n = 0;
    void add(const MetricsRecord& r) {
        cnr += r.cnr;
        iou_fg += r.iou_fg;
        miou += r.miou_2class;
        auc += r.auc_roc;
        top1 += r.top1_hit ? 1.0 : 0.0;
        ++n;
    }
    std::array<double, 5> means() const {
        const double d = double(n);
        return {cnr / d, iou_fg / d, miou / d, auc / d, top1 / d};
    }
};

inline MeanStd mean_std(const std::vector<double>& xs) {
    MeanStd out;
    if (xs.empty()) return out;
    out.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / double(xs.size());
    if (xs.size() > 1) {
        double ss = 0;
        for (double x : xs) ss += (x - out.mean) * (x - out.mean);
        out.std = std::sqrt(ss / double(xs.size() - 1));
    }
    return out;
}

inline MetricSummary summarize(const std::vector<std::array<double, 5>>& per_run) {
    std::array<std::vector<double>, 5> cols;
    for (const auto& r : per_run)
        for (size_t k = 0; k < 5; ++k) cols[k].push_back(r[k]);
    return {mean_std(cols[0]), mean_std(cols[1]), mean_std(cols[2]), mean_std(cols[3]), mean_std(cols[4])};
}

}  // namespace detail

// Per-category means over samples within each run, then mean +/- sample std across runs.
// The weighted row weights categories by their sample counts, i.e. it averages all samples of a run.
inline GroundingReport aggregate(const std::vector<MetricsRecord>& records) {
    if (records.empty()) throw ArgumentError("aggregate: no records");
    GroundingReport rep;
    std::map<std::string, std::map<std::string, detail::Sums>> by_cat;  // category -> run -> sums
    std::map<std::string, detail::Sums> all;                             // run -> sums
    for (const auto& r : records) {
        if (r.category.empty()) {
            rep.warnings.push_back("record '" + r.sample_id + "' has no category; omitted");
            continue;
        }
        by_cat[r.category][r.run].add(r);
        all[r.run].add(r);
    }
    if (all.empty()) throw ArgumentError("aggregate: no categorized records");
    for (const auto& [run, _] : all) rep.runs.push_back(run);

    for (const auto& [cat, runs] : by_cat) {
        CategoryRow row;
        row.category = cat;
        std::vector<std::array<double, 5>> per_run;
        size_t total = 0;
        for (const auto& [run, s] : runs) {
            per_run.push_back(s.means());
            total += s.n;
        }
        if (runs.size() != rep.runs.size())
            rep.warnings.push_back("category '" + cat + "' is missing from some runs");
        row.n = total / runs.size();
        row.metrics = detail::summarize(per_run);
        rep.categories.push_back(std::move(row));
    }

    rep.weighted.category = "weighted_avg";
    std::vector<std::array<double, 5>> per_run;
    size_t total = 0;
    for (const auto& [run, s] : all) {
        per_run.push_back(s.means());
        total += s.n;
    }
    rep.weighted.n = total / all.size();
    rep.weighted.metrics = detail::summarize(per_run);
    return rep;
}

namespace detail {
inline std::string fmt_num(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
}  // namespace detail

inline const char* kReportCsvHeader = "category,n,cnr_mean,cnr_std,iou_fg_mean,miou2_mean,auc_mean,top1_rate";

inline void write_report_csv(std::ostream& os, const GroundingReport& rep) {
    os << kReportCsvHeader << "\n";
    auto row = [&](const CategoryRow& r) {
        using detail::fmt_num;
        os << r.category << ',' << r.n << ',' << fmt_num(r.metrics.cnr.mean) << ',' << fmt_num(r.metrics.cnr.std)
           << ',' << fmt_num(r.metrics.iou_fg.mean) << ',' << fmt_num(r.metrics.miou_2class.mean) << ','
           << fmt_num(r.metrics.auc_roc.mean) << ',' << fmt_num(r.metrics.top1.mean) << "\n";
    };
    for (const auto& r : rep.categories) row(r);
    row(rep.weighted);
}

inline nlohmann::json report_to_json(const GroundingReport& rep) {
    auto ms = [](const MeanStd& m) {
        nlohmann::json j = {{"mean", m.mean}, {"std", m.std}};
        if (std::isinf(m.mean)) j["mean"] = "inf";
        return j;
    };
    auto row = [&](const CategoryRow& r) {
        return nlohmann::json{{"category", r.category},
                              {"n", r.n},
                              {"cnr", ms(r.metrics.cnr)},
                              {"iou_fg", ms(r.metrics.iou_fg)},
                              {"miou_2class", ms(r.metrics.miou_2class)},
                              {"auc_roc", ms(r.metrics.auc_roc)},
                              {"top1", ms(r.metrics.top1)}};
    };
    nlohmann::json j;
    j["runs"] = rep.runs;
    j["categories"] = nlohmann::json::array();
    for (const auto& r : rep.categories) j["categories"].push_back(row(r));
    j["weighted_avg"] = row(rep.weighted);
    j["warnings"] = rep.warnings;
    return j;
}

}  // namespace attnground
