#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <vector>

#include "attnground/synthoracle.hpp"
#include "attnground/toydiff/encoder.hpp"
#include "attnground/toydiff/render.hpp"
#include "attnground/toydiff/schedule.hpp"
#include "attnground/toydiff/unet.hpp"

namespace attnground::toydiff {

// Images enter the model scaled to [-1, 1].
inline Mat image_to_latent(const Image& img) {
    Mat m(1, Eigen::Index(img.pixels.size()));
    for (size_t i = 0; i < img.pixels.size(); ++i) m(0, Eigen::Index(i)) = img.pixels[i] * 2.0f - 1.0f;
    return m;
}

inline Image latent_to_image(const float* v, int side) {
    Image img;
    img.side = side;
    img.pixels.resize(size_t(side) * side);
    for (size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = std::clamp((v[i] + 1.0f) * 0.5f, 0.0f, 1.0f);
    return img;
}

class Adam {
  public:
    Adam(size_t n, double lr, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(b1), b2_(b2), eps_(eps), m_(n, 0.0f), v_(n, 0.0f) {}

    void step(std::vector<float>& params, const std::vector<float>& grads) {
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, double(t_)), c2 = 1.0 - std::pow(b2_, double(t_));
        for (size_t i = 0; i < params.size(); ++i) {
            m_[i] = float(b1_ * m_[i] + (1 - b1_) * grads[i]);
            v_[i] = float(b2_ * v_[i] + (1 - b2_) * double(grads[i]) * grads[i]);
            params[i] -= float(lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_));
        }
    }
    void set_lr(double lr) { lr_ = lr; }

  private:
    double lr_, b1_, b2_, eps_;
    long long t_ = 0;
    std::vector<float> m_, v_;
};

// ema <- decay * ema + (1 - decay) * params
inline void ema_update(std::vector<float>& ema, const std::vector<float>& params, double decay) {
    for (size_t i = 0; i < ema.size(); ++i) ema[i] = float(decay * ema[i] + (1.0 - decay) * params[i]);
}

struct TrainingExample {
    Mat x0;   // 1 x 256
    Mat ctx;  // de x N
};

inline std::vector<TrainingExample> prepare_corpus(const std::vector<SceneSpec>& scenes, const EncoderTable& enc) {
    std::vector<TrainingExample> out;
    out.reserve(scenes.size());
    for (const auto& s : scenes) out.push_back({image_to_latent(render(s)), enc.encode(s.caption)});
    return out;
}

struct TrainResult {
    std::vector<float> ema;
    std::vector<double> loss_trace;   // one entry per optimizer step
    std::vector<double> epoch_loss;   // mean per epoch
    double initial_eval_loss = 0.0;   // fixed evaluation batch, before training
    double final_eval_loss = 0.0;     // same batch, raw weights after training
    double seconds = 0.0;
    long long steps = 0;
};

// Epsilon-prediction loss on a batch, optionally with gradients. Conditioning entries
// of nullptr select the null sequence.
inline double diffusion_loss(UNet& model, const NoiseSchedule& sched, const std::vector<const TrainingExample*>& batch,
                             const std::vector<int>& t, const std::vector<bool>& drop, const Mat& noise,
                             bool with_grad) {
    const int B = int(batch.size());
    const int hw = int(batch.front()->x0.cols());
    Mat xt(1, Eigen::Index(B) * hw);
    std::vector<const Mat*> ctx(static_cast<size_t>(B));
    for (int b = 0; b < B; ++b) {
        const double ab = sched.alpha_bar(t[size_t(b)]);
        xt.middleCols(Eigen::Index(b) * hw, hw) = float(std::sqrt(ab)) * batch[size_t(b)]->x0 +
                                                  float(std::sqrt(1.0 - ab)) * noise.middleCols(Eigen::Index(b) * hw, hw);
        ctx[size_t(b)] = drop[size_t(b)] ? nullptr : &batch[size_t(b)]->ctx;
    }
    const Mat pred = model.forward(xt, t, ctx);
    const Mat diff = pred - noise;
    const double n = double(diff.size());
    const double loss = double(diff.squaredNorm()) / n;
    if (with_grad) model.backward(diff * float(2.0 / n));
    return loss;
}

inline constexpr size_t kMinCorpus = 500;

struct TrainOptions {
    // Called after each epoch with (epoch, mean loss); may be empty.
    std::function<void(int, double)> on_epoch;
    int eval_batch = 256;
};

inline TrainResult train(UNet& model, const NoiseSchedule& sched, const std::vector<TrainingExample>& corpus,
                         const TrainOptions& opt = {}) {
    const auto& cfg = model.config();
    if (corpus.size() < kMinCorpus)
        throw ArgumentError("train: corpus has " + std::to_string(corpus.size()) + " scenes, at least " +
                            std::to_string(kMinCorpus) + " required");
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(cfg.seed * 0x94D049BB133111EBull + 7);
    std::normal_distribution<float> gauss(0.0f, 1.0f);
    std::uniform_int_distribution<int> tdist(0, sched.T - 1);
    std::bernoulli_distribution dropd(cfg.cond_dropout);

    // Fixed evaluation batch: conditioned, timesteps spread evenly over the schedule.
    const int ne = std::min<int>(opt.eval_batch, int(corpus.size()));
    std::vector<const TrainingExample*> eval_items;
    std::vector<int> eval_t;
    for (int i = 0; i < ne; ++i) {
        eval_items.push_back(&corpus[size_t(i) * corpus.size() / size_t(ne)]);
        eval_t.push_back(int((long long)i * sched.T / ne));
    }
    const int hw = int(corpus.front().x0.cols());
    Mat eval_noise(1, Eigen::Index(ne) * hw);
    {
        std::mt19937_64 erng(cfg.seed + 99991);
        for (Eigen::Index i = 0; i < eval_noise.size(); ++i) eval_noise.data()[i] = gauss(erng);
    }
    auto eval_loss = [&] {
        double total = 0;
        for (int s = 0; s < ne; s += 64) {
            const int e = std::min(ne, s + 64);
            std::vector<const TrainingExample*> items(eval_items.begin() + s, eval_items.begin() + e);
            std::vector<int> ts(eval_t.begin() + s, eval_t.begin() + e);
            const Mat nz = eval_noise.middleCols(Eigen::Index(s) * hw, Eigen::Index(e - s) * hw);
            total += diffusion_loss(model, sched, items, ts, std::vector<bool>(size_t(e - s), false), nz, false) * (e - s);
        }
        return total / ne;
    };

    TrainResult res;
    res.initial_eval_loss = eval_loss();
    res.ema = model.params().data();
    Adam adam(model.params().size(), cfg.learning_rate);

    const long long steps_per_epoch = (long long)((corpus.size() + size_t(cfg.batch_size) - 1) / size_t(cfg.batch_size));
    const long long total_steps = steps_per_epoch * cfg.epochs;
    std::vector<size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_sum = 0;
        int epoch_n = 0;
        for (size_t start = 0; start < order.size(); start += size_t(cfg.batch_size)) {
            const size_t end = std::min(order.size(), start + size_t(cfg.batch_size));
            std::vector<const TrainingExample*> batch;
            std::vector<int> ts;
            std::vector<bool> drop;
            for (size_t i = start; i < end; ++i) {
                batch.push_back(&corpus[order[i]]);
                ts.push_back(tdist(rng));
                drop.push_back(dropd(rng));
            }
            Mat noise(1, Eigen::Index(batch.size()) * hw);
            for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = gauss(rng);

            // Cosine decay to 10% of the base rate.
            const double progress = total_steps > 1 ? double(res.steps) / double(total_steps - 1) : 0.0;
            adam.set_lr(cfg.learning_rate * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(progress * std::numbers::pi))));

            model.params().zero_grad();
            const double loss = diffusion_loss(model, sched, batch, ts, drop, noise, true);
            if (!std::isfinite(loss))
                throw Error("train: non-finite loss at step " + std::to_string(res.steps) + " (epoch " +
                            std::to_string(epoch) + ")");
            auto& g = model.params().grads();
            double norm = 0;
            for (float v : g) norm += double(v) * v;
            norm = std::sqrt(norm);
            if (cfg.grad_clip > 0 && norm > cfg.grad_clip) {
                const float s = float(cfg.grad_clip / norm);
                for (float& v : g) v *= s;
            }
            adam.step(model.params().data(), g);
            ema_update(res.ema, model.params().data(), cfg.ema_decay);
            res.loss_trace.push_back(loss);
            epoch_sum += loss;
            ++epoch_n;
            ++res.steps;
        }
        res.epoch_loss.push_back(epoch_sum / epoch_n);
        if (opt.on_epoch) opt.on_epoch(epoch, res.epoch_loss.back());
    }
    res.final_eval_loss = eval_loss();
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

}  // namespace attnground::toydiff
