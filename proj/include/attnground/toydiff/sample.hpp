#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "attnground/attnstore.hpp"
#include "attnground/toydiff/encoder.hpp"
#include "attnground/toydiff/render.hpp"
#include "attnground/toydiff/schedule.hpp"
#include "attnground/toydiff/train.hpp"
#include "attnground/toydiff/unet.hpp"

namespace attnground::toydiff {

enum class SampleMode { text, cfg, gt1_cfg, gt_cfg };

inline std::string_view to_string(SampleMode m) {
    switch (m) {
        case SampleMode::text: return "text";
        case SampleMode::cfg: return "cfg";
        case SampleMode::gt1_cfg: return "gt1_cfg";
        case SampleMode::gt_cfg: return "gt_cfg";
    }
    return "?";
}

inline SampleMode parse_sample_mode(std::string_view s) {
    if (s == "text") return SampleMode::text;
    if (s == "cfg") return SampleMode::cfg;
    if (s == "gt1_cfg" || s == "gt1-cfg") return SampleMode::gt1_cfg;
    if (s == "gt_cfg" || s == "gt-cfg") return SampleMode::gt_cfg;
    throw ArgumentError("unknown sampling mode '" + std::string(s) + "'");
}

inline bool uses_ground_truth(SampleMode m) { return m == SampleMode::gt1_cfg || m == SampleMode::gt_cfg; }
inline bool uses_guidance(SampleMode m) { return m != SampleMode::text; }

struct SampleOptions {
    SampleMode mode = SampleMode::gt_cfg;
    int steps = 50;
    double guidance = 3.0;
    uint64_t seed = 0;
    bool capture = true;
    uint64_t first_index = 0;  // global index of the first caption, for chunked runs
};

struct SampleOutput {
    std::vector<Image> images;
    std::optional<AttentionDump> dump;
};

// Samples one image per caption. Each sample owns an RNG derived from (seed, global index),
// so results do not depend on how captions are split into chunks.
inline SampleOutput sample(UNet& model, const NoiseSchedule& sched, const EncoderTable& enc,
                           const std::vector<std::vector<TokenMeta>>& captions, const SampleOptions& opt,
                           const std::vector<Image>* gt_images = nullptr) {
    if (captions.empty()) throw ArgumentError("sample: no captions");
    if (opt.guidance < 0) throw ArgumentError("sample: guidance scale must be >= 0");
    if (uses_ground_truth(opt.mode) && (!gt_images || gt_images->size() != captions.size()))
        throw ArgumentError("sample: mode " + std::string(to_string(opt.mode)) + " needs one ground-truth image per caption");
    const auto ts = sched.inference_steps(opt.steps);
    const int B = int(captions.size());
    const int side = model.config().side, hw = side * side;
    const uint32_t N = uint32_t(captions.front().size());
    for (const auto& c : captions)
        if (c.size() != N) throw ArgumentError("sample: captions must share one padded length");
    if (int(N) != model.config().n_tokens)
        throw ArgumentError("sample: captions have " + std::to_string(N) + " tokens, model expects " +
                            std::to_string(model.config().n_tokens));

    std::vector<Mat> ctx;
    for (const auto& c : captions) ctx.push_back(enc.encode(c));
    std::vector<const Mat*> cond(static_cast<size_t>(B)), uncond(static_cast<size_t>(B), nullptr);
    for (int b = 0; b < B; ++b) cond[size_t(b)] = &ctx[size_t(b)];

    std::vector<std::mt19937_64> rngs;
    for (int b = 0; b < B; ++b) rngs.emplace_back(opt.seed * 0xBF58476D1CE4E5B9ull + (opt.first_index + uint64_t(b)) * 0x94D049BB133111EBull + 1);
    std::normal_distribution<float> gauss(0.0f, 1.0f);
    auto draw = [&](Mat& m) {
        for (int b = 0; b < B; ++b)
            for (int p = 0; p < hw; ++p) m(0, Eigen::Index(b) * hw + p) = gauss(rngs[size_t(b)]);
    };
    Mat x0_gt;
    if (uses_ground_truth(opt.mode)) {
        x0_gt.resize(1, Eigen::Index(B) * hw);
        for (int b = 0; b < B; ++b) x0_gt.middleCols(Eigen::Index(b) * hw, hw) = image_to_latent((*gt_images)[size_t(b)]);
    }
    auto noised_gt = [&](int t) {
        Mat eps(1, Eigen::Index(B) * hw);
        draw(eps);
        const double ab = sched.alpha_bar(t);
        return Mat(float(std::sqrt(ab)) * x0_gt + float(std::sqrt(1.0 - ab)) * eps);
    };

    SampleOutput out;
    if (opt.capture) {
        std::vector<LayerInfo> layers;
        for (int l = 0; l < kAttentionLayers; ++l) {
            const uint32_t s = uint32_t(UNet::layer_side(l));
            layers.push_back({uint32_t(l), s, s, s});
        }
        out.dump.emplace(uint32_t(B), std::vector<int32_t>(ts.begin(), ts.end()), layers, N);
        out.dump->attributes() = {{"source", "toydiff"},
                                  {"mode", to_string(opt.mode)},
                                  {"steps", opt.steps},
                                  {"guidance", uses_guidance(opt.mode) ? opt.guidance : 0.0},
                                  {"seed", opt.seed},
                                  {"encoder", to_string(enc.variant)},
                                  {"capture", "conditional"}};
    }

    Mat x(1, Eigen::Index(B) * hw);
    if (uses_ground_truth(opt.mode))
        x = noised_gt(ts.front());
    else
        draw(x);

    Mat x0_hat;
    for (size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        if (opt.mode == SampleMode::gt_cfg && i > 0) x = noised_gt(t);
        const std::vector<int> tb(size_t(B), t);
        Mat eps = model.forward(x, tb, cond);
        if (out.dump) {
            for (int l = 0; l < kAttentionLayers; ++l)
                for (int b = 0; b < B; ++b) {
                    const Mat& p = model.attention_probs(l, b);  // pixels x tokens
                    for (uint32_t k = 0; k < N; ++k) {
                        auto s = out.dump->slice(size_t(b), i, size_t(l), k);
                        for (size_t px = 0; px < s.size(); ++px) s[px] = p(Eigen::Index(px), k);
                    }
                }
        }
        if (uses_guidance(opt.mode)) {
            const Mat eps_u = model.forward(x, tb, uncond);
            eps = eps_u + float(opt.guidance) * (eps - eps_u);
        }
        const double ab = sched.alpha_bar(t);
        x0_hat = ((x - float(std::sqrt(1.0 - ab)) * eps) / float(std::sqrt(ab))).cwiseMax(-1.0f).cwiseMin(1.0f);
        const int t_next = i + 1 < ts.size() ? ts[i + 1] : -1;
        if (t_next < 0) break;
        if (opt.mode == SampleMode::gt_cfg) continue;  // the next latent is re-derived from the ground truth
        // Ancestral step from t to t_next using the posterior q(x_next | x_t, x0_hat).
        const double ab_next = sched.alpha_bar(t_next);
        const double a_step = ab / ab_next, b_step = 1.0 - a_step;
        const double c0 = std::sqrt(ab_next) * b_step / (1.0 - ab);
        const double ct = std::sqrt(a_step) * (1.0 - ab_next) / (1.0 - ab);
        const double sigma = std::sqrt(b_step * (1.0 - ab_next) / (1.0 - ab));
        Mat z(1, x.cols());
        draw(z);
        x = float(c0) * x0_hat + float(ct) * x + float(sigma) * z;
    }
    for (int b = 0; b < B; ++b) out.images.push_back(latent_to_image(x0_hat.data() + Eigen::Index(b) * hw, side));
    return out;
}

}  // namespace attnground::toydiff
