#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnground/toydiff/nn.hpp"

namespace attnground::toydiff {

struct DenoiserConfig {
    int side = 16;
    std::array<int, 3> channels{16, 32, 32};
    int temb_dim = 64;
    int key_dim = 32;
    int ctx_dim = 32;
    int n_tokens = 28;
    bool coord_channels = true;  // append x/y ramps to the input image
    double cond_dropout = 0.3;
    double ema_decay = 0.999;
    double learning_rate = 2e-3;
    double grad_clip = 1.0;
    int batch_size = 32;
    int epochs = 40;
    uint64_t seed = 0;

    void validate() const {
        if (side != 16) throw ArgumentError("denoiser: only 16x16 images are supported");
        for (int c : channels)
            if (c < 1) throw ArgumentError("denoiser: channel counts must be positive");
        if (!(cond_dropout >= 0 && cond_dropout <= 1)) throw ArgumentError("denoiser: cond_dropout outside [0, 1]");
        if (!(ema_decay > 0 && ema_decay < 1)) throw ArgumentError("denoiser: ema_decay outside (0, 1)");
        if (batch_size < 1 || epochs < 0) throw ArgumentError("denoiser: batch_size >= 1 and epochs >= 0 required");
        if (!(learning_rate > 0)) throw ArgumentError("denoiser: learning rate must be positive");
    }
};

inline void to_json(nlohmann::json& j, const DenoiserConfig& c) {
    j = {{"side", c.side},
         {"channels", c.channels},
         {"temb_dim", c.temb_dim},
         {"key_dim", c.key_dim},
         {"ctx_dim", c.ctx_dim},
         {"n_tokens", c.n_tokens},
         {"coord_channels", c.coord_channels},
         {"cond_dropout", c.cond_dropout},
         {"ema_decay", c.ema_decay},
         {"learning_rate", c.learning_rate},
         {"grad_clip", c.grad_clip},
         {"batch_size", c.batch_size},
         {"epochs", c.epochs},
         {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, DenoiserConfig& c) {
    DenoiserConfig d;
    c.side = j.value("side", d.side);
    c.channels = j.value("channels", d.channels);
    c.temb_dim = j.value("temb_dim", d.temb_dim);
    c.key_dim = j.value("key_dim", d.key_dim);
    c.ctx_dim = j.value("ctx_dim", d.ctx_dim);
    c.n_tokens = j.value("n_tokens", d.n_tokens);
    c.coord_channels = j.value("coord_channels", d.coord_channels);
    c.cond_dropout = j.value("cond_dropout", d.cond_dropout);
    c.ema_decay = j.value("ema_decay", d.ema_decay);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.grad_clip = j.value("grad_clip", d.grad_clip);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.epochs = j.value("epochs", d.epochs);
    c.seed = j.value("seed", d.seed);
}

inline constexpr int kAttentionLayers = 3;

// Pixel-space U-Net, 16 -> 8 -> 4 and back, with cross-attention at each of the three
// resolutions on the way down. Input channels: noisy image, optionally plus two coordinate ramps.
class UNet {
  public:
    explicit UNet(const DenoiserConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        std::mt19937_64 rng(cfg.seed * 0x2545F4914F6CDD1Dull + 41);
        const auto [c1, c2, c3] = cfg.channels;
        const int E = cfg.temb_dim;
        conv_in_.init(ps_, "conv_in", in_channels(), c1, 3, 1.0, rng);
        time1_.init(ps_, "time1", 32, E, 1.0, rng);
        time2_.init(ps_, "time2", E, E, 1.0, rng);
        res1_.init(ps_, "down16", c1, c1, E, rng);
        attn_[0].init(ps_, "attn16", c1, cfg.ctx_dim, cfg.key_dim, rng);
        res2_.init(ps_, "down8", c1, c2, E, rng);
        attn_[1].init(ps_, "attn8", c2, cfg.ctx_dim, cfg.key_dim, rng);
        res3_.init(ps_, "down4", c2, c3, E, rng);
        attn_[2].init(ps_, "attn4", c3, cfg.ctx_dim, cfg.key_dim, rng);
        res_mid_.init(ps_, "mid4", c3, c3, E, rng);
        res4_.init(ps_, "up8", c3 + c2, c2, E, rng);
        res5_.init(ps_, "up16", c2 + c1, c1, E, rng);
        conv_out_.init(ps_, "conv_out", c1, 1, 3, 0.0, rng);
        null_ = ps_.add("null_context", cfg.ctx_dim, cfg.n_tokens);
        ps_.init_normal(null_, 1.0, rng);
    }

    const DenoiserConfig& config() const { return cfg_; }
    ParamStore& params() { return ps_; }
    const ParamStore& params() const { return ps_; }
    Mat null_context() { return ps_.mat(null_); }

    static int layer_side(int l) { return 16 >> l; }
    const CrossAttention& attention(int l) const { return attn_[size_t(l)]; }

    // x: 1 x (B*256) noisy images; t: timestep per sample; ctx: de x N per sample
    // (nullptr entries use the learned null sequence). Returns predicted noise, 1 x (B*256).
    Mat forward(const Mat& x, const std::vector<int>& t, const std::vector<const Mat*>& ctx) {
        B_ = int(t.size());
        const int side = cfg_.side, hw = side * side;
        Act in(in_channels(), B_, side, side);
        for (int b = 0; b < B_; ++b)
            for (int p = 0; p < hw; ++p) {
                const Eigen::Index col = Eigen::Index(b) * hw + p;
                in.m(0, col) = x(0, col);
                if (!cfg_.coord_channels) continue;
                in.m(1, col) = float(p / side) / (side - 1) * 2.0f - 1.0f;
                in.m(2, col) = float(p % side) / (side - 1) * 2.0f - 1.0f;
            }
        ctx_.clear();
        uses_null_.clear();
        const Mat null = ps_.mat(null_);
        for (int b = 0; b < B_; ++b) {
            uses_null_.push_back(ctx[size_t(b)] == nullptr);
            ctx_.push_back(ctx[size_t(b)] ? *ctx[size_t(b)] : null);
        }

        Mat tf(32, B_);
        for (int b = 0; b < B_; ++b) tf.col(b) = timestep_features(t[size_t(b)], 32);
        const Mat h = time_act1_.forward(time1_.forward(ps_, tf));
        temb_act_ = time_act2_.forward(time2_.forward(ps_, h));

        Act a = conv_in_.forward(ps_, in);
        a = res1_.forward(ps_, a, temb_act_);
        s1_ = attn_[0].forward(ps_, a, ctx_);
        a = avg_pool2(s1_);
        a = res2_.forward(ps_, a, temb_act_);
        s2_ = attn_[1].forward(ps_, a, ctx_);
        a = avg_pool2(s2_);
        a = res3_.forward(ps_, a, temb_act_);
        a = attn_[2].forward(ps_, a, ctx_);
        a = res_mid_.forward(ps_, a, temb_act_);
        a = concat_channels(upsample2(a), s2_);
        a = res4_.forward(ps_, a, temb_act_);
        a = concat_channels(upsample2(a), s1_);
        a = res5_.forward(ps_, a, temb_act_);
        a.m = out_act_.forward(a.m);
        return conv_out_.forward(ps_, a).m;
    }

    // Backpropagates dL/d(output) through the last forward call, accumulating parameter gradients.
    void backward(const Mat& dout) {
        const auto [c1, c2, c3] = cfg_.channels;
        const int side = cfg_.side;
        Act d(1, B_, side, side);
        d.m = dout;
        Mat dtemb = Mat::Zero(cfg_.temb_dim, B_);
        std::vector<Mat> dctx_total(static_cast<size_t>(B_));
        auto add_ctx = [&](const std::vector<Mat>& dctx) {
            for (int b = 0; b < B_; ++b) {
                if (dctx_total[size_t(b)].size() == 0)
                    dctx_total[size_t(b)] = dctx[size_t(b)];
                else
                    dctx_total[size_t(b)] += dctx[size_t(b)];
            }
        };
        std::vector<Mat> dctx;

        Act a = conv_out_.backward(ps_, d);
        a.m = out_act_.backward(a.m);
        a = res5_.backward(ps_, a, dtemb);
        Act ds1 = slice_channels(a, c2, c1);
        a = upsample2_backward(slice_channels(a, 0, c2));
        a = res4_.backward(ps_, a, dtemb);
        Act ds2 = slice_channels(a, c3, c2);
        a = upsample2_backward(slice_channels(a, 0, c3));
        a = res_mid_.backward(ps_, a, dtemb);
        a = attn_[2].backward(ps_, a, ctx_, &dctx);
        add_ctx(dctx);
        a = res3_.backward(ps_, a, dtemb);
        a = avg_pool2_backward(a);
        a.m += ds2.m;
        a = attn_[1].backward(ps_, a, ctx_, &dctx);
        add_ctx(dctx);
        a = res2_.backward(ps_, a, dtemb);
        a = avg_pool2_backward(a);
        a.m += ds1.m;
        a = attn_[0].backward(ps_, a, ctx_, &dctx);
        add_ctx(dctx);
        a = res1_.backward(ps_, a, dtemb);
        conv_in_.backward(ps_, a);

        const Mat dh = time2_.backward(ps_, time_act2_.backward(dtemb));
        time1_.backward(ps_, time_act1_.backward(dh));

        auto gnull = ps_.grad(null_);
        for (int b = 0; b < B_; ++b)
            if (uses_null_[size_t(b)]) gnull += dctx_total[size_t(b)];
    }

    // Attention probabilities of layer l for sample b from the last forward: pixels x tokens.
    const Mat& attention_probs(int l, int b) const { return attn_[size_t(l)].cache[size_t(b)].p; }

  private:
    int in_channels() const { return cfg_.coord_channels ? 3 : 1; }

    static Act slice_channels(const Act& a, int from, int count) {
        Act out(count, a.B, a.H, a.W);
        out.m = a.m.middleRows(from, count);
        return out;
    }

    DenoiserConfig cfg_;
    ParamStore ps_;
    Conv2d conv_in_, conv_out_;
    Linear time1_, time2_;
    SiLU time_act1_, time_act2_, out_act_;
    ResBlock res1_, res2_, res3_, res_mid_, res4_, res5_;
    std::array<CrossAttention, kAttentionLayers> attn_;
    size_t null_ = 0;

    int B_ = 0;
    std::vector<Mat> ctx_;
    std::vector<bool> uses_null_;
    Mat temb_act_;
    Act s1_, s2_;
};

}  // namespace attnground::toydiff
