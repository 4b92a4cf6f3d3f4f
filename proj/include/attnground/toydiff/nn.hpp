#pragma once

// Minimal float32 layers with explicit backward passes. Activations of a batch
// are stored as C x (B*H*W) column-major matrices, one column per pixel.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "attnground/errors.hpp"

namespace attnground::toydiff {

using Mat = Eigen::MatrixXf;
using Vec = Eigen::VectorXf;
using MatMap = Eigen::Map<Mat>;
using VecMap = Eigen::Map<Vec>;

struct Act {
    int C = 0, B = 0, H = 0, W = 0;
    Mat m;  // C x (B*H*W)

    Act() = default;
    Act(int c, int b, int h, int w) : C(c), B(b), H(h), W(w), m(Mat::Zero(c, Eigen::Index(b) * h * w)) {}
    int hw() const { return H * W; }
};

// All trainable parameters live in one flat buffer so optimizer, EMA and checkpoints are trivial.
class ParamStore {
  public:
    struct Entry {
        std::string name;
        size_t offset;
        int rows, cols;
    };

    size_t add(std::string name, int rows, int cols) {
        const size_t off = data_.size();
        entries_.push_back({std::move(name), off, rows, cols});
        data_.resize(off + size_t(rows) * cols, 0.0f);
        grad_.resize(data_.size(), 0.0f);
        return entries_.size() - 1;
    }

    MatMap mat(size_t id) {
        const auto& e = entries_[id];
        return {data_.data() + e.offset, e.rows, e.cols};
    }
    MatMap grad(size_t id) {
        const auto& e = entries_[id];
        return {grad_.data() + e.offset, e.rows, e.cols};
    }
    const Entry& entry(size_t id) const { return entries_[id]; }
    const std::vector<Entry>& entries() const { return entries_; }

    std::vector<float>& data() { return data_; }
    const std::vector<float>& data() const { return data_; }
    std::vector<float>& grads() { return grad_; }
    void zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0f); }
    size_t size() const { return data_.size(); }

    void init_normal(size_t id, double stddev, std::mt19937_64& rng) {
        std::normal_distribution<double> g(0.0, stddev);
        auto m = mat(id);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = float(g(rng));
    }

  private:
    std::vector<Entry> entries_;
    std::vector<float> data_;
    std::vector<float> grad_;
};

inline float silu(float x) { return x / (1.0f + std::exp(-x)); }
inline float silu_grad(float x) {
    const float s = 1.0f / (1.0f + std::exp(-x));
    return s * (1.0f + x * (1.0f - s));
}

struct SiLU {
    Mat input;
    Mat forward(const Mat& x) {
        input = x;
        return x.unaryExpr([](float v) { return silu(v); });
    }
    Mat backward(const Mat& dy) const { return dy.cwiseProduct(input.unaryExpr([](float v) { return silu_grad(v); })); }
};

struct Linear {
    size_t w = 0, b = 0;
    int in = 0, out = 0;
    Mat x;

    void init(ParamStore& ps, const std::string& name, int in_features, int out_features, double gain,
              std::mt19937_64& rng) {
        in = in_features;
        out = out_features;
        w = ps.add(name + ".w", out, in);
        b = ps.add(name + ".b", out, 1);
        if (gain > 0) ps.init_normal(w, gain / std::sqrt(double(in)), rng);
    }
    // x: in x n
    Mat forward(ParamStore& ps, const Mat& input) {
        x = input;
        Mat y = ps.mat(w) * input;
        y.colwise() += Vec(ps.mat(b));
        return y;
    }
    Mat backward(ParamStore& ps, const Mat& dy) {
        ps.grad(w).noalias() += dy * x.transpose();
        ps.grad(b) += dy.rowwise().sum();
        return ps.mat(w).transpose() * dy;
    }
};

// 3x3 (padding 1) or 1x1 convolution via im2col. Row index of the column matrix is
// tap * cin + channel, so reads and writes both run along contiguous channels.
struct Conv2d {
    size_t w = 0, b = 0;
    int cin = 0, cout = 0, k = 3;
    Mat cols;
    int B = 0, H = 0, W = 0;

    void init(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int kernel, double gain,
              std::mt19937_64& rng) {
        if (kernel != 1 && kernel != 3) throw ArgumentError("conv: kernel must be 1 or 3");
        cin = in_ch;
        cout = out_ch;
        k = kernel;
        w = ps.add(name + ".w", cout, cin * k * k);
        b = ps.add(name + ".b", cout, 1);
        if (gain > 0) ps.init_normal(w, gain / std::sqrt(double(cin * k * k)), rng);
    }

    Act forward(ParamStore& ps, const Act& x) {
        B = x.B;
        H = x.H;
        W = x.W;
        Act y(cout, B, H, W);
        if (k == 1) {
            cols = x.m;
        } else {
            cols.setZero(Eigen::Index(9) * cin, x.m.cols());
            const int hw = H * W;
            for (int bi = 0; bi < B; ++bi)
                for (int r = 0; r < H; ++r)
                    for (int c = 0; c < W; ++c) {
                        const Eigen::Index dst = Eigen::Index(bi) * hw + r * W + c;
                        for (int ky = 0; ky < 3; ++ky) {
                            const int rr = r + ky - 1;
                            if (rr < 0 || rr >= H) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                const int cc = c + kx - 1;
                                if (cc < 0 || cc >= W) continue;
                                const Eigen::Index src = Eigen::Index(bi) * hw + rr * W + cc;
                                cols.col(dst).segment((ky * 3 + kx) * cin, cin) = x.m.col(src);
                            }
                        }
                    }
        }
        y.m.noalias() = ps.mat(w) * cols;
        y.m.colwise() += Vec(ps.mat(b));
        return y;
    }

    Act backward(ParamStore& ps, const Act& dy) {
        ps.grad(w).noalias() += dy.m * cols.transpose();
        ps.grad(b) += dy.m.rowwise().sum();
        Mat dcols = ps.mat(w).transpose() * dy.m;
        Act dx(cin, B, H, W);
        if (k == 1) {
            dx.m = std::move(dcols);
            return dx;
        }
        const int hw = H * W;
        for (int bi = 0; bi < B; ++bi)
            for (int r = 0; r < H; ++r)
                for (int c = 0; c < W; ++c) {
                    const Eigen::Index dst = Eigen::Index(bi) * hw + r * W + c;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int rr = r + ky - 1;
                        if (rr < 0 || rr >= H) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int cc = c + kx - 1;
                            if (cc < 0 || cc >= W) continue;
                            const Eigen::Index src = Eigen::Index(bi) * hw + rr * W + cc;
                            dx.m.col(src) += dcols.col(dst).segment((ky * 3 + kx) * cin, cin);
                        }
                    }
                }
        return dx;
    }
};

// Per-pixel normalization over channels with learned gain and bias.
struct ChannelNorm {
    size_t g = 0, b = 0;
    int C = 0;
    Mat xhat;
    Vec inv_std;
    static constexpr float eps = 1e-5f;

    void init(ParamStore& ps, const std::string& name, int channels) {
        C = channels;
        g = ps.add(name + ".g", C, 1);
        b = ps.add(name + ".b", C, 1);
        ps.mat(g).setOnes();
    }
    Mat forward(ParamStore& ps, const Mat& x) {
        const Eigen::RowVectorXf mean = x.colwise().mean();
        xhat = x.rowwise() - mean;
        const Eigen::RowVectorXf var = xhat.array().square().colwise().mean();
        inv_std = (var.array() + eps).rsqrt().transpose();
        xhat = xhat * inv_std.asDiagonal();
        Mat y = Vec(ps.mat(g)).asDiagonal() * xhat;
        y.colwise() += Vec(ps.mat(b));
        return y;
    }
    Mat backward(ParamStore& ps, const Mat& dy) {
        ps.grad(g) += dy.cwiseProduct(xhat).rowwise().sum();
        ps.grad(b) += dy.rowwise().sum();
        const Mat dxhat = Vec(ps.mat(g)).asDiagonal() * dy;
        const Eigen::RowVectorXf m1 = dxhat.colwise().mean();
        const Eigen::RowVectorXf m2 = dxhat.cwiseProduct(xhat).colwise().mean();
        Mat dx = dxhat.rowwise() - m1;
        dx -= xhat * m2.asDiagonal();
        return dx * inv_std.asDiagonal();
    }
};

inline Act avg_pool2(const Act& x) {
    Act y(x.C, x.B, x.H / 2, x.W / 2);
    for (int b = 0; b < x.B; ++b)
        for (int r = 0; r < y.H; ++r)
            for (int c = 0; c < y.W; ++c) {
                const Eigen::Index base = Eigen::Index(b) * x.hw();
                y.m.col(Eigen::Index(b) * y.hw() + r * y.W + c) =
                    0.25f * (x.m.col(base + (2 * r) * x.W + 2 * c) + x.m.col(base + (2 * r) * x.W + 2 * c + 1) +
                             x.m.col(base + (2 * r + 1) * x.W + 2 * c) + x.m.col(base + (2 * r + 1) * x.W + 2 * c + 1));
            }
    return y;
}

inline Act avg_pool2_backward(const Act& dy) {
    Act dx(dy.C, dy.B, dy.H * 2, dy.W * 2);
    for (int b = 0; b < dy.B; ++b)
        for (int r = 0; r < dx.H; ++r)
            for (int c = 0; c < dx.W; ++c)
                dx.m.col(Eigen::Index(b) * dx.hw() + r * dx.W + c) =
                    0.25f * dy.m.col(Eigen::Index(b) * dy.hw() + (r / 2) * dy.W + c / 2);
    return dx;
}

inline Act upsample2(const Act& x) {
    Act y(x.C, x.B, x.H * 2, x.W * 2);
    for (int b = 0; b < x.B; ++b)
        for (int r = 0; r < y.H; ++r)
            for (int c = 0; c < y.W; ++c)
                y.m.col(Eigen::Index(b) * y.hw() + r * y.W + c) = x.m.col(Eigen::Index(b) * x.hw() + (r / 2) * x.W + c / 2);
    return y;
}

inline Act upsample2_backward(const Act& dy) {
    Act dx(dy.C, dy.B, dy.H / 2, dy.W / 2);
    for (int b = 0; b < dy.B; ++b)
        for (int r = 0; r < dy.H; ++r)
            for (int c = 0; c < dy.W; ++c)
                dx.m.col(Eigen::Index(b) * dx.hw() + (r / 2) * dx.W + c / 2) +=
                    dy.m.col(Eigen::Index(b) * dy.hw() + r * dy.W + c);
    return dx;
}

inline Act concat_channels(const Act& a, const Act& b) {
    Act y(a.C + b.C, a.B, a.H, a.W);
    y.m.topRows(a.C) = a.m;
    y.m.bottomRows(b.C) = b.m;
    return y;
}

// Residual block: x + conv2(silu(conv1(silu(x)) + time projection)), with a 1x1 skip when channels change.
struct ResBlock {
    Conv2d conv1, conv2, skip;
    Linear temb_proj;
    SiLU act_in, act_mid;
    bool has_skip = false;
    int cin = 0, cout = 0;

    void init(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int temb_dim, std::mt19937_64& rng) {
        cin = in_ch;
        cout = out_ch;
        conv1.init(ps, name + ".conv1", in_ch, out_ch, 3, std::sqrt(2.0), rng);
        temb_proj.init(ps, name + ".temb", temb_dim, out_ch, 1.0, rng);
        conv2.init(ps, name + ".conv2", out_ch, out_ch, 3, 0.0, rng);  // zero: block starts as identity
        has_skip = in_ch != out_ch;
        if (has_skip) skip.init(ps, name + ".skip", in_ch, out_ch, 1, 1.0, rng);
    }

    // temb_act: silu(time embedding), temb_dim x B
    Act forward(ParamStore& ps, const Act& x, const Mat& temb_act) {
        Act h;
        h.C = x.C;
        h.B = x.B;
        h.H = x.H;
        h.W = x.W;
        h.m = act_in.forward(x.m);
        Act h1 = conv1.forward(ps, h);
        const Mat t = temb_proj.forward(ps, temb_act);  // cout x B
        const int hw = x.hw();
        for (int b = 0; b < x.B; ++b) h1.m.middleCols(Eigen::Index(b) * hw, hw).colwise() += t.col(b);
        h1.m = act_mid.forward(h1.m);
        Act out = conv2.forward(ps, h1);
        out.m += has_skip ? skip.forward(ps, x).m : x.m;
        return out;
    }

    // Returns dx; accumulates the time-embedding gradient into dtemb_act.
    Act backward(ParamStore& ps, const Act& dout, Mat& dtemb_act) {
        Act dh1 = conv2.backward(ps, dout);
        dh1.m = act_mid.backward(dh1.m);
        const int hw = dout.hw();
        Mat dt(cout, dout.B);
        for (int b = 0; b < dout.B; ++b) dt.col(b) = dh1.m.middleCols(Eigen::Index(b) * hw, hw).rowwise().sum();
        dtemb_act += temb_proj.backward(ps, dt);
        Act dh = conv1.backward(ps, dh1);
        Act dx = dh;
        dx.m = act_in.backward(dh.m);
        if (has_skip)
            dx.m += skip.backward(ps, dout).m;
        else
            dx.m += dout.m;
        return dx;
    }
};

// Single-head cross-attention from image pixels (queries) to caption tokens (keys/values).
// The softmax output P (pixels x tokens per sample) is kept for capture.
struct CrossAttention {
    ChannelNorm norm;
    size_t wq = 0, wk = 0, wv = 0, wo = 0, bo = 0;
    int C = 0, dk = 32, de = 32;

    struct Cache {
        Mat xn;   // C x hw
        Mat q;    // dk x hw
        Mat k;    // dk x N
        Mat v;    // dk x N
        Mat p;    // hw x N
        Mat o;    // dk x hw
    };
    std::vector<Cache> cache;
    Mat xn_all;

    void init(ParamStore& ps, const std::string& name, int channels, int ctx_dim, int key_dim, std::mt19937_64& rng) {
        C = channels;
        dk = key_dim;
        de = ctx_dim;
        norm.init(ps, name + ".norm", C);
        wq = ps.add(name + ".wq", dk, C);
        wk = ps.add(name + ".wk", dk, de);
        wv = ps.add(name + ".wv", dk, de);
        wo = ps.add(name + ".wo", C, dk);
        bo = ps.add(name + ".bo", C, 1);
        ps.init_normal(wq, 1.0 / std::sqrt(double(C)), rng);
        ps.init_normal(wk, 1.0 / std::sqrt(double(de)), rng);
        ps.init_normal(wv, 1.0 / std::sqrt(double(de)), rng);
        // wo stays zero so the block starts as identity
    }

    // ctx: one de x N matrix per sample.
    Act forward(ParamStore& ps, const Act& x, const std::vector<Mat>& ctx) {
        const int hw = x.hw();
        const float scale = 1.0f / std::sqrt(float(dk));
        xn_all = norm.forward(ps, x.m);
        cache.assign(size_t(x.B), {});
        Act y = x;
        for (int b = 0; b < x.B; ++b) {
            auto& c = cache[size_t(b)];
            c.xn = xn_all.middleCols(Eigen::Index(b) * hw, hw);
            c.q.noalias() = ps.mat(wq) * c.xn;
            c.k.noalias() = ps.mat(wk) * ctx[size_t(b)];
            c.v.noalias() = ps.mat(wv) * ctx[size_t(b)];
            c.p.noalias() = c.q.transpose() * c.k;
            c.p *= scale;
            for (Eigen::Index i = 0; i < c.p.rows(); ++i) {
                const float mx = c.p.row(i).maxCoeff();
                c.p.row(i) = (c.p.row(i).array() - mx).exp();
                c.p.row(i) /= c.p.row(i).sum();
            }
            c.o.noalias() = c.v * c.p.transpose();
            y.m.middleCols(Eigen::Index(b) * hw, hw).noalias() += ps.mat(wo) * c.o;
            y.m.middleCols(Eigen::Index(b) * hw, hw).colwise() += Vec(ps.mat(bo));
        }
        return y;
    }

    // Returns dx; dctx receives the context gradient per sample when non-null.
    Act backward(ParamStore& ps, const Act& dy, const std::vector<Mat>& ctx, std::vector<Mat>* dctx) {
        const int hw = dy.hw();
        const float scale = 1.0f / std::sqrt(float(dk));
        Mat dxn_all(C, dy.m.cols());
        if (dctx) dctx->assign(ctx.size(), Mat());
        for (int b = 0; b < dy.B; ++b) {
            const auto& c = cache[size_t(b)];
            const auto dyb = dy.m.middleCols(Eigen::Index(b) * hw, hw);
            ps.grad(wo).noalias() += dyb * c.o.transpose();
            ps.grad(bo) += dyb.rowwise().sum();
            const Mat dO = ps.mat(wo).transpose() * dyb;  // dk x hw
            const Mat dV = dO * c.p;                     // dk x N
            const Mat dP = dO.transpose() * c.v;         // hw x N
            Mat dS = c.p.cwiseProduct(dP);
            const Vec rs = dS.rowwise().sum();
            dS -= c.p.cwiseProduct(rs.replicate(1, c.p.cols()));
            dS *= scale;
            const Mat dQ = c.k * dS.transpose();  // dk x hw
            const Mat dK = c.q * dS;              // dk x N
            ps.grad(wq).noalias() += dQ * c.xn.transpose();
            ps.grad(wk).noalias() += dK * ctx[size_t(b)].transpose();
            ps.grad(wv).noalias() += dV * ctx[size_t(b)].transpose();
            dxn_all.middleCols(Eigen::Index(b) * hw, hw).noalias() = ps.mat(wq).transpose() * dQ;
            if (dctx) (*dctx)[size_t(b)] = ps.mat(wk).transpose() * dK + ps.mat(wv).transpose() * dV;
        }
        Act dx = dy;
        dx.m += norm.backward(ps, dxn_all);
        return dx;
    }
};

inline Vec timestep_features(double t, int dim) {
    Vec f(dim);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(1000.0) * i / half);
        f(i) = float(std::sin(t * freq));
        f(i + half) = float(std::cos(t * freq));
    }
    return f;
}

}  // namespace attnground::toydiff
