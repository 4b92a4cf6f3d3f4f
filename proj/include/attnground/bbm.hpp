#pragma once

// Bimodal Bias Merging.
//
// The start-token map of a ground-truth-conditioned run (image bias) and the
// token map of a pure-noise run (text bias) are multiplied as matrices into an
// interaction map P_mult. Their structural similarity s decides how far the
// original activation map P_comb is pulled toward P_mult along a Bezier curve.

#include <algorithm>
#include <string>
#include <string_view>
#include <vector>

#include "attnground/activation_map.hpp"
#include "attnground/attnstore.hpp"
#include "attnground/errors.hpp"
#include "attnground/extraction.hpp"

namespace attnground {

enum class MergeVariant { linear, quadratic, mixture };

inline std::string_view to_string(MergeVariant v) {
    switch (v) {
        case MergeVariant::linear: return "linear";
        case MergeVariant::quadratic: return "quadratic";
        case MergeVariant::mixture: return "mixture";
    }
    return "?";
}

inline MergeVariant parse_merge_variant(std::string_view s) {
    if (s == "linear") return MergeVariant::linear;
    if (s == "quadratic") return MergeVariant::quadratic;
    if (s == "mixture") return MergeVariant::mixture;
    throw ArgumentError("unknown merge variant '" + std::string(s) + "'");
}

struct SsimParams {
    int window = 7;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
};

namespace detail {

// (rows+1) x (cols+1) summed-area table of f(a, b).
template <class F>
std::vector<double> integral(const ActivationMap& a, const ActivationMap& b, F f) {
    const int R = a.rows, C = a.cols;
    std::vector<double> s(size_t(R + 1) * (C + 1), 0.0);
    for (int r = 0; r < R; ++r) {
        double row = 0.0;
        for (int c = 0; c < C; ++c) {
            row += f(a(r, c), b(r, c));
            s[size_t(r + 1) * (C + 1) + (c + 1)] = s[size_t(r) * (C + 1) + (c + 1)] + row;
        }
    }
    return s;
}

inline double box_sum(const std::vector<double>& s, int cols, int r, int c, int w) {
    const size_t stride = size_t(cols) + 1;
    return s[(r + w) * stride + (c + w)] - s[r * stride + (c + w)] - s[(r + w) * stride + c] + s[r * stride + c];
}

}  // namespace detail

// Mean local SSIM over all fully contained window positions, not clipped.
inline double ssim_unclipped(const ActivationMap& a, const ActivationMap& b, const SsimParams& p = {}) {
    if (!a.same_shape(b)) throw ArgumentError("ssim: shape mismatch");
    if (p.window < 1 || p.window > a.rows || p.window > a.cols) throw ArgumentError("ssim: window larger than map");
    const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
    const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);

    const auto sx = detail::integral(a, b, [](double x, double) { return x; });
    const auto sy = detail::integral(a, b, [](double, double y) { return y; });
    const auto sxx = detail::integral(a, b, [](double x, double) { return x * x; });
    const auto syy = detail::integral(a, b, [](double, double y) { return y * y; });
    const auto sxy = detail::integral(a, b, [](double x, double y) { return x * y; });

    const double n = double(p.window) * p.window;
    double total = 0.0;
    int count = 0;
    for (int r = 0; r + p.window <= a.rows; ++r) {
        for (int c = 0; c + p.window <= a.cols; ++c) {
            const double mx = detail::box_sum(sx, a.cols, r, c, p.window) / n;
            const double my = detail::box_sum(sy, a.cols, r, c, p.window) / n;
            const double vx = detail::box_sum(sxx, a.cols, r, c, p.window) / n - mx * mx;
            const double vy = detail::box_sum(syy, a.cols, r, c, p.window) / n - my * my;
            const double cxy = detail::box_sum(sxy, a.cols, r, c, p.window) / n - mx * my;
            total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++count;
        }
    }
    return total / count;
}

inline double ssim(const ActivationMap& a, const ActivationMap& b, const SsimParams& p = {}) {
    return std::clamp(ssim_unclipped(a, b, p), 0.0, 1.0);
}

// Ordinary n x n matrix product of the two maps, min-max normalized.
inline ActivationMap bias_interaction(const ActivationMap& p_img, const ActivationMap& p_txt) {
    if (!p_img.is_square() || !p_txt.is_square()) throw ArgumentError("bias_interaction: maps must be square");
    if (!p_img.same_shape(p_txt)) throw ArgumentError("bias_interaction: shape mismatch");
    const int n = p_img.rows;
    ActivationMap out = ActivationMap::square(n, 0.0, Provenance::mult);
    for (int i = 0; i < n; ++i) {
        double* row = out.values.data() + size_t(i) * n;
        for (int k = 0; k < n; ++k) {
            const double a = p_img(i, k);
            const double* b = p_txt.values.data() + size_t(k) * n;
            for (int j = 0; j < n; ++j) row[j] += a * b[j];
        }
    }
    normalize_in_place(out);
    return out;
}

// Bezier interpolation between P_comb (s = 0) and P_mult (s = 1), before renormalization.
inline ActivationMap merge_unnormalized(const ActivationMap& p_comb, const ActivationMap& p_mult, double s,
                                        MergeVariant variant) {
    if (!(s >= 0.0 && s <= 1.0)) throw ArgumentError("merge: s must lie in [0, 1]");
    if (!p_comb.same_shape(p_mult)) throw ArgumentError("merge: shape mismatch");
    ActivationMap out(p_comb.rows, p_comb.cols, 0.0, Provenance::bbm);
    const double w0 = (1 - s) * (1 - s);
    const double w1 = 2 * (1 - s) * s;
    const double w2 = s * s;
    for (size_t i = 0; i < out.size(); ++i) {
        const double c = p_comb.values[i];
        const double m = p_mult.values[i];
        switch (variant) {
            case MergeVariant::linear: out.values[i] = s * m + (1 - s) * c; break;
            case MergeVariant::quadratic: out.values[i] = w1 * (m * c) + w0 * c + w2 * m; break;
            case MergeVariant::mixture: out.values[i] = w1 * ((m + c + m * c) / 2) + w0 * c + w2 * m; break;
        }
    }
    return out;
}

inline ActivationMap merge(const ActivationMap& p_comb, const ActivationMap& p_mult, double s, MergeVariant variant) {
    return normalized(merge_unnormalized(p_comb, p_mult, s, variant));
}

struct MergeResult {
    double s = 0.0;
    ActivationMap p_comb;
    ActivationMap p_img;
    ActivationMap p_txt;
    ActivationMap p_mult;
    ActivationMap p_bbm;
    MergeVariant variant = MergeVariant::mixture;
};

// Merge from already extracted maps. All three must be normalized and share a square shape.
inline MergeResult merge_maps(ActivationMap p_comb, ActivationMap p_img, ActivationMap p_txt, MergeVariant variant,
                              const SsimParams& params = {}) {
    MergeResult r;
    r.variant = variant;
    p_txt.provenance = Provenance::txt;
    r.s = ssim(p_txt, p_img, params);
    r.p_mult = bias_interaction(p_img, p_txt);
    r.p_bbm = merge(p_comb, r.p_mult, r.s, variant);
    r.p_comb = std::move(p_comb);
    r.p_img = std::move(p_img);
    r.p_txt = std::move(p_txt);
    return r;
}

// dump_gt: ground-truth-conditioned run; dump_noise: pure-noise run of the same caption.
inline MergeResult run_bbm(const AttentionDump& dump_gt, const AttentionDump& dump_noise,
                           const std::vector<TokenMeta>& tokens, ExtractionSpec spec, size_t sample,
                           MergeVariant variant, const SsimParams& params = {}) {
    if (dump_gt.n_tokens() != dump_noise.n_tokens() || dump_gt.batch_size() != dump_noise.batch_size())
        throw ArgumentError("run_bbm: ground-truth and noise dumps have incompatible shapes");
    // Cross-map arithmetic is only meaningful on a common [0, 1] range.
    spec.normalize = true;
    auto p_comb = extract_comb(dump_gt, tokens, spec, sample);
    auto p_img = extract_img_bias(dump_gt, spec, sample);
    auto p_txt = extract_comb(dump_noise, tokens, spec, sample);
    return merge_maps(std::move(p_comb), std::move(p_img), std::move(p_txt), variant, params);
}

}  // namespace attnground
