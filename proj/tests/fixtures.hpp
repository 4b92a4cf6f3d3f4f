#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "attnground/attnstore.hpp"

namespace fixtures {

using namespace attnground;

inline TokenMeta tok(std::string text, bool lexical = false, bool disease = false) {
    TokenMeta t;
    t.text = std::move(text);
    t.is_lexical = lexical;
    t.is_disease = disease;
    return t;
}
inline TokenMeta start_tok() {
    TokenMeta t;
    t.text = "[start]";
    t.is_start = true;
    return t;
}
inline TokenMeta end_tok() {
    TokenMeta t;
    t.text = "[end]";
    t.is_end = true;
    return t;
}
inline TokenMeta pad_tok() {
    TokenMeta t;
    t.text = "[pad]";
    t.is_pad = true;
    return t;
}

// [start] "patchy"(lex) "the" "lung"(lex) [end]
inline std::vector<TokenMeta> patchy_lung() {
    return {start_tok(), tok("patchy", true), tok("the"), tok("lung", true), end_tok()};
}

// Per-pixel softmax of random logits.
inline AttentionDump random_dump(std::mt19937_64& rng, uint32_t B, std::vector<int32_t> ts,
                                 std::vector<LayerInfo> layers, uint32_t N, double spread = 2.0) {
    AttentionDump d(B, std::move(ts), std::move(layers), N);
    std::normal_distribution<double> g(0.0, spread);
    for (uint32_t b = 0; b < B; ++b)
        for (size_t t = 0; t < d.n_timesteps(); ++t)
            for (size_t l = 0; l < d.n_layers(); ++l) {
                auto block = d.layer_block(b, t, l);
                const size_t npix = d.layers()[l].pixels();
                for (size_t p = 0; p < npix; ++p) {
                    std::vector<double> e(N);
                    double z = 0;
                    for (uint32_t k = 0; k < N; ++k) z += e[k] = std::exp(g(rng));
                    for (uint32_t k = 0; k < N; ++k) block[k * npix + p] = float(e[k] / z);
                }
            }
    return d;
}

class TempDir {
  public:
    TempDir() {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("attnground-test-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

  private:
    std::filesystem::path path_;
};

}  // namespace fixtures
