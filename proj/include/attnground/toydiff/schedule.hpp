#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "attnground/errors.hpp"

namespace attnground::toydiff {

struct NoiseSchedule {
    int T = 100;
    double beta_start = 1e-3, beta_end = 0.2;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;  // cumulative products

    // Linear betas from beta_start to beta_end over T steps.
    static NoiseSchedule linear(int T = 100, double beta_start = 1e-3, double beta_end = 0.2) {
        if (T < 1) throw ArgumentError("schedule: T must be >= 1");
        if (!(beta_start > 0 && beta_end < 1 && beta_start <= beta_end))
            throw ArgumentError("schedule: need 0 < beta_start <= beta_end < 1");
        NoiseSchedule s;
        s.T = T;
        s.beta_start = beta_start;
        s.beta_end = beta_end;
        double bar = 1.0;
        for (int t = 0; t < T; ++t) {
            const double b = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (T - 1);
            s.betas.push_back(b);
            s.alphas.push_back(1.0 - b);
            bar *= 1.0 - b;
            s.alpha_bars.push_back(bar);
        }
        return s;
    }

    // alpha_bar at t, with alpha_bar(-1) = 1 for the clean image.
    double alpha_bar(int t) const { return t < 0 ? 1.0 : alpha_bars.at(size_t(t)); }

    // Inference steps subsample [0, T) uniformly, returned in denoising order (descending).
    std::vector<int> inference_steps(int steps) const {
        if (steps < 1 || steps > T)
            throw ArgumentError("schedule: steps must be in [1, " + std::to_string(T) + "]");
        std::vector<int> out;
        for (int i = steps - 1; i >= 0; --i) out.push_back(int((long long)(i + 1) * T / steps) - 1);
        return out;
    }
};

}  // namespace attnground::toydiff
