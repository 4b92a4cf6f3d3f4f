#pragma once

// Frozen synthetic text encoders: a word table plus one fixed mixing step, so each token
// also carries the words of its own object phrase (a lookup table alone cannot bind a
// concept to its position words).

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "attnground/attnstore.hpp"
#include "attnground/errors.hpp"
#include "attnground/synthoracle.hpp"

namespace attnground::toydiff {

enum class EncoderVariant { grounded, degraded };

inline std::string_view to_string(EncoderVariant v) { return v == EncoderVariant::grounded ? "grounded" : "degraded"; }

inline EncoderVariant parse_encoder_variant(std::string_view s) {
    if (s == "grounded") return EncoderVariant::grounded;
    if (s == "degraded") return EncoderVariant::degraded;
    throw ArgumentError("unknown encoder variant '" + std::string(s) + "'");
}

inline const std::vector<std::string>& vocabulary() {
    static const std::vector<std::string> words{
        "[start]", "[end]", "[pad]",                                 // special
        "disk", "square", "bar",                                    // concepts
        "top", "upper", "middle", "lower", "bottom",                // positions
        "leftmost", "left", "central", "right", "rightmost",
        "small", "large",                                           // sizes
        "a", "the", "in", "at", "and", "there", "is", "with", "of",  // function words
    };
    return words;
}

inline bool is_position_word(std::string_view w) {
    const auto& v = vertical_words();
    const auto& h = horizontal_words();
    return std::find(v.begin(), v.end(), w) != v.end() || std::find(h.begin(), h.end(), w) != h.end();
}

struct EncoderTable {
    EncoderVariant variant = EncoderVariant::grounded;
    int dim = 32;
    uint64_t seed = 0;
    bool frozen = true;
    double phrase_mix = 1.0;  // weight of the phrase mean added to every token
    Eigen::MatrixXf table;  // dim x vocabulary size
    std::map<std::string, int, std::less<>> index;

    int id(std::string_view word) const {
        auto it = index.find(word);
        if (it == index.end()) throw ArgumentError("encoder: word '" + std::string(word) + "' not in vocabulary");
        return it->second;
    }

    // dim x N context for a caption. Phrases are the runs of tokens between separators
    // (special tokens, "and", "there", "is").
    Eigen::MatrixXf encode(const std::vector<TokenMeta>& caption) const {
        Eigen::MatrixXf ctx(dim, Eigen::Index(caption.size()));
        for (size_t i = 0; i < caption.size(); ++i) ctx.col(Eigen::Index(i)) = table.col(id(caption[i].text));
        auto separator = [](const TokenMeta& t) {
            return t.is_start || t.is_end || t.is_pad || t.text == "and" || t.text == "there" || t.text == "is";
        };
        const Eigen::MatrixXf words = ctx;
        for (size_t a = 0; a < caption.size();) {
            if (separator(caption[a])) {
                ++a;
                continue;
            }
            size_t b = a;
            while (b < caption.size() && !separator(caption[b])) ++b;
            const Eigen::VectorXf mean = words.middleCols(Eigen::Index(a), Eigen::Index(b - a)).rowwise().mean();
            for (size_t i = a; i < b; ++i) ctx.col(Eigen::Index(i)) += float(phrase_mix) * mean;
            a = b;
        }
        return ctx;
    }
};

// Grounded: every word gets its own direction from an orthonormal basis (vocabulary <= dim),
// scaled to norm sqrt(dim). Degraded: identical, except all position words share one embedding.
inline EncoderTable make_encoder(EncoderVariant variant, int dim = 32, uint64_t seed = 0, double phrase_mix = 1.0) {
    const auto& vocab = vocabulary();
    if (dim < int(vocab.size())) throw ArgumentError("encoder: dimension smaller than the vocabulary");
    EncoderTable enc;
    enc.variant = variant;
    enc.dim = dim;
    enc.seed = seed;
    enc.phrase_mix = phrase_mix;
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + 0xE2C0DE);
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd raw(dim, dim);
    for (Eigen::Index i = 0; i < raw.size(); ++i) raw.data()[i] = g(rng);
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(raw).householderQ();
    enc.table.resize(dim, Eigen::Index(vocab.size()));
    const double scale = std::sqrt(double(dim));
    int shared = -1;
    for (size_t w = 0; w < vocab.size(); ++w) {
        enc.index[vocab[w]] = int(w);
        int basis = int(w);
        if (variant == EncoderVariant::degraded && is_position_word(vocab[w])) {
            if (shared < 0) shared = int(w);
            basis = shared;
        }
        enc.table.col(Eigen::Index(w)) = (q.col(basis) * scale).cast<float>();
    }
    return enc;
}

}  // namespace attnground::toydiff
