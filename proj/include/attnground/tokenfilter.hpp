#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "attnground/attnstore.hpp"
#include "attnground/errors.hpp"

namespace attnground {

enum class TokenMode { lexical, disease, end_token, all_content };

inline std::string_view to_string(TokenMode m) {
    switch (m) {
        case TokenMode::lexical: return "lexical";
        case TokenMode::disease: return "disease";
        case TokenMode::end_token: return "end";
        case TokenMode::all_content: return "all";
    }
    return "?";
}

inline TokenMode parse_token_mode(std::string_view s) {
    if (s == "lexical") return TokenMode::lexical;
    if (s == "disease") return TokenMode::disease;
    if (s == "end" || s == "end-token") return TokenMode::end_token;
    if (s == "all" || s == "all-content") return TokenMode::all_content;
    throw ArgumentError("unknown token mode '" + std::string(s) + "'");
}

struct TokenSelection {
    std::vector<size_t> indices;
    // Set when the requested filter matched nothing and all content tokens were used instead.
    bool fell_back = false;
};

inline std::vector<size_t> content_tokens(const std::vector<TokenMeta>& tokens) {
    std::vector<size_t> out;
    for (size_t i = 0; i < tokens.size(); ++i)
        if (!tokens[i].is_special()) out.push_back(i);
    return out;
}

inline TokenSelection select_tokens(const std::vector<TokenMeta>& tokens, TokenMode mode) {
    if (mode == TokenMode::end_token) {
        for (size_t i = 0; i < tokens.size(); ++i)
            if (tokens[i].is_end) return {{i}, false};
        throw ValidationError("token: no end token to select");
    }

    auto content = content_tokens(tokens);
    if (content.empty()) throw DegenerateInputError("token: caption has no content tokens");
    if (mode == TokenMode::all_content) return {std::move(content), false};

    TokenSelection sel;
    for (size_t i : content) {
        const bool keep = mode == TokenMode::lexical ? tokens[i].is_lexical : tokens[i].is_disease;
        if (keep) sel.indices.push_back(i);
    }
    if (sel.indices.empty()) {
        // Disease mode falls back by definition; lexical mode mirrors it for captions made only of function words.
        sel.indices = std::move(content);
        sel.fell_back = true;
    }
    return sel;
}

}  // namespace attnground
