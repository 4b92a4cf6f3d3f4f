#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "attnground/activation_map.hpp"
#include "attnground/errors.hpp"

namespace attnground {

struct GmmComponent {
    double weight = 0.5;
    double mean = 0.0;
    double variance = 1.0;
};

struct GmmFit {
    std::array<GmmComponent, 2> components;
    std::vector<double> log_likelihood;  // one entry per E-step
    int iterations = 0;
    bool converged = false;
    // Index of the foreground (higher-mean) component; ties resolve to 0.
    int foreground = 1;
    bool mean_tie = false;
};

struct GmmOptions {
    int max_iters = 200;
    double tol = 1e-7;
    double variance_floor = 1e-6;
};

namespace detail {

inline double log_normal(double x, double mean, double var) {
    const double d = x - mean;
    return -0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
}

inline double log_add(double a, double b) {
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Linear-interpolated percentile of sorted data, q in [0, 1].
inline double percentile(const std::vector<double>& sorted, double q) {
    const double pos = q * double(sorted.size() - 1);
    const size_t lo = size_t(std::floor(pos));
    const size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - double(lo));
}

}  // namespace detail

// EM for a two-component univariate Gaussian mixture. Initialization is
// deterministic: means at the 25th/75th percentiles (min/max when those
// coincide), both variances set to the pooled sample variance, equal weights.
// `seed` is accepted for interface stability; no randomness is used.
inline GmmFit fit_gmm(std::span<const double> values, const GmmOptions& opt = {}, uint64_t seed = 0) {
    (void)seed;
    if (values.size() < 2) throw DegenerateInputError("gmm: need at least two values");
    for (double v : values)
        if (!std::isfinite(v)) throw ArgumentError("gmm: non-finite value");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    if (sorted.front() == sorted.back()) throw DegenerateInputError("gmm: constant input");

    const double n = double(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var = std::max(var / n, opt.variance_floor);

    GmmFit fit;
    double m0 = detail::percentile(sorted, 0.25);
    double m1 = detail::percentile(sorted, 0.75);
    if (m0 == m1) {
        m0 = sorted.front();
        m1 = sorted.back();
    }
    fit.components = {GmmComponent{0.5, m0, var}, GmmComponent{0.5, m1, var}};

    std::vector<double> resp(values.size());  // responsibility of component 1
    for (int it = 0; it < opt.max_iters; ++it) {
        // E-step
        const auto& c = fit.components;
        const double lw0 = std::log(c[0].weight), lw1 = std::log(c[1].weight);
        double ll = 0.0;
        for (size_t i = 0; i < values.size(); ++i) {
            const double a = c[0].weight > 0 ? lw0 + detail::log_normal(values[i], c[0].mean, c[0].variance)
                                             : -INFINITY;
            const double b = c[1].weight > 0 ? lw1 + detail::log_normal(values[i], c[1].mean, c[1].variance)
                                             : -INFINITY;
            const double lse = detail::log_add(a, b);
            ll += lse;
            resp[i] = std::exp(b - lse);
        }
        fit.log_likelihood.push_back(ll);
        fit.iterations = it + 1;
        if (it > 0 && ll - fit.log_likelihood[it - 1] < opt.tol) {
            fit.converged = true;
            break;
        }

        // M-step
        double n1 = 0.0, s1 = 0.0, s0 = 0.0;
        for (size_t i = 0; i < values.size(); ++i) {
            n1 += resp[i];
            s1 += resp[i] * values[i];
            s0 += (1.0 - resp[i]) * values[i];
        }
        const double n0 = n - n1;
        std::array<GmmComponent, 2> next = fit.components;
        next[0].weight = n0 / n;
        next[1].weight = n1 / n;
        if (n0 > 0) next[0].mean = s0 / n0;
        if (n1 > 0) next[1].mean = s1 / n1;
        double q0 = 0.0, q1 = 0.0;
        for (size_t i = 0; i < values.size(); ++i) {
            const double d0 = values[i] - next[0].mean, d1 = values[i] - next[1].mean;
            q0 += (1.0 - resp[i]) * d0 * d0;
            q1 += resp[i] * d1 * d1;
        }
        if (n0 > 0) next[0].variance = std::max(q0 / n0, opt.variance_floor);
        if (n1 > 0) next[1].variance = std::max(q1 / n1, opt.variance_floor);
        fit.components = next;
    }

    const auto& c = fit.components;
    fit.mean_tie = c[0].mean == c[1].mean;
    fit.foreground = c[1].mean > c[0].mean ? 1 : 0;
    return fit;
}

// Posterior probability of the foreground component at value x.
inline double foreground_posterior(const GmmFit& fit, double x) {
    const auto& fg = fit.components[fit.foreground];
    const auto& bg = fit.components[1 - fit.foreground];
    if (fg.weight <= 0) return 0.0;
    if (bg.weight <= 0) return 1.0;
    const double a = std::log(fg.weight) + detail::log_normal(x, fg.mean, fg.variance);
    const double b = std::log(bg.weight) + detail::log_normal(x, bg.mean, bg.variance);
    return 1.0 / (1.0 + std::exp(b - a));
}

// Lowest value between the two component means at which the foreground
// posterior reaches 0.5. With unequal variances the posterior may cross 0.5
// a second time far out in the background tail; only the crossing between the
// means separates the clusters.
inline double posterior_threshold(const GmmFit& fit) {
    const auto& fg = fit.components[fit.foreground];
    const auto& bg = fit.components[1 - fit.foreground];
    const double lo = bg.mean, hi = fg.mean;
    if (!(hi > lo)) return hi;
    // g(x) = log-odds(fg vs bg) = a x^2 + b x + c
    const double a = 0.5 / bg.variance - 0.5 / fg.variance;
    const double b = fg.mean / fg.variance - bg.mean / bg.variance;
    const double c = std::log(fg.weight / bg.weight) - 0.5 * std::log(fg.variance / bg.variance) -
                     0.5 * fg.mean * fg.mean / fg.variance + 0.5 * bg.mean * bg.mean / bg.variance;
    auto g = [&](double x) { return (a * x + b) * x + c; };
    if (g(lo) >= 0) return lo;
    if (g(hi) < 0) return hi;
    // Bisection keeps the root inside [lo, hi] without worrying about the quadratic's branch choice.
    double l = lo, h = hi;
    for (int i = 0; i < 200 && h - l > 1e-15 * std::max(1.0, std::abs(h)); ++i) {
        const double mid = 0.5 * (l + h);
        (g(mid) >= 0 ? h : l) = mid;
    }
    return h;
}

struct BinaryMask {
    int rows = 0;
    int cols = 0;
    std::vector<uint8_t> values;
    double threshold = 0.0;
    // Source map was constant; the mask is empty by convention.
    bool degenerate = false;

    size_t count() const { return size_t(std::count(values.begin(), values.end(), uint8_t(1))); }
    bool operator()(int r, int c) const { return values[size_t(r) * cols + c] != 0; }
};

inline BinaryMask binarize(const ActivationMap& map, const GmmFit& fit) {
    BinaryMask mask{map.rows, map.cols, std::vector<uint8_t>(map.size(), 0), 0.0, false};
    mask.threshold = std::clamp(posterior_threshold(fit), map.min(), map.max());
    for (size_t i = 0; i < map.size(); ++i) mask.values[i] = map.values[i] >= mask.threshold ? 1 : 0;
    return mask;
}

// Fit + binarize. Constant maps yield an all-zero mask flagged degenerate.
inline BinaryMask gmm_mask(const ActivationMap& map, const GmmOptions& opt = {}, GmmFit* fit_out = nullptr) {
    if (map.values.empty()) throw ArgumentError("mask: empty map");
    if (is_constant(map)) {
        return BinaryMask{map.rows, map.cols, std::vector<uint8_t>(map.size(), 0), map.values.front(), true};
    }
    auto fit = fit_gmm(map.values, opt);
    auto mask = binarize(map, fit);
    if (fit_out) *fit_out = std::move(fit);
    return mask;
}

}  // namespace attnground
