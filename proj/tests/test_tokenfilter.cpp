#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "attnground/tokenfilter.hpp"
#include "fixtures.hpp"

using namespace attnground;
using namespace fixtures;

TEST(TokenFilter, LexicalDropsFunctionWords) {
    auto sel = select_tokens(patchy_lung(), TokenMode::lexical);
    EXPECT_EQ(sel.indices, (std::vector<size_t>{1, 3}));
    EXPECT_FALSE(sel.fell_back);
}

TEST(TokenFilter, EndTokenMode) {
    EXPECT_EQ(select_tokens(patchy_lung(), TokenMode::end_token).indices, (std::vector<size_t>{4}));
    auto padded = patchy_lung();
    padded.push_back(pad_tok());
    EXPECT_EQ(select_tokens(padded, TokenMode::end_token).indices, (std::vector<size_t>{4}));
}

TEST(TokenFilter, DiseaseFallsBackToAllContent) {
    auto sel = select_tokens(patchy_lung(), TokenMode::disease);
    EXPECT_EQ(sel.indices, (std::vector<size_t>{1, 2, 3}));
    EXPECT_TRUE(sel.fell_back);
    auto flagged = patchy_lung();
    flagged[3].is_disease = true;
    sel = select_tokens(flagged, TokenMode::disease);
    EXPECT_EQ(sel.indices, (std::vector<size_t>{3}));
    EXPECT_FALSE(sel.fell_back);
}

TEST(TokenFilter, FunctionWordsOnlyFallsBackInLexicalMode) {
    std::vector<TokenMeta> t{start_tok(), tok("the"), tok("of"), end_tok()};
    auto sel = select_tokens(t, TokenMode::lexical);
    EXPECT_EQ(sel.indices, (std::vector<size_t>{1, 2}));
    EXPECT_TRUE(sel.fell_back);
}

TEST(TokenFilter, NoContentIsAnError) {
    std::vector<TokenMeta> t{start_tok(), end_tok(), pad_tok()};
    EXPECT_THROW(select_tokens(t, TokenMode::lexical), DegenerateInputError);
    EXPECT_THROW(select_tokens(t, TokenMode::all_content), DegenerateInputError);
    EXPECT_EQ(select_tokens(t, TokenMode::end_token).indices, (std::vector<size_t>{1}));
}

TEST(TokenFilter, ParseModes) {
    EXPECT_EQ(parse_token_mode("lexical"), TokenMode::lexical);
    EXPECT_EQ(parse_token_mode("disease"), TokenMode::disease);
    EXPECT_EQ(parse_token_mode("end"), TokenMode::end_token);
    EXPECT_EQ(parse_token_mode("all"), TokenMode::all_content);
    EXPECT_THROW(parse_token_mode("nouns"), ArgumentError);
}

// Random captions: selections never include special tokens and nest inside all-content.
TEST(TokenFilter, SubsetProperties) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<TokenMeta> t{start_tok()};
        const int words = 1 + int(rng() % 10);
        for (int i = 0; i < words; ++i) {
            const bool lex = rng() % 2, dis = lex && rng() % 3 == 0;
            t.push_back(tok("w", lex, dis));
        }
        t.push_back(end_tok());
        for (int i = int(rng() % 4); i > 0; --i) t.push_back(pad_tok());
        ASSERT_NO_THROW(validate_tokens(t));

        const auto all = select_tokens(t, TokenMode::all_content).indices;
        for (auto mode : {TokenMode::lexical, TokenMode::disease, TokenMode::all_content}) {
            const auto sel = select_tokens(t, mode);
            ASSERT_FALSE(sel.indices.empty());
            for (size_t i : sel.indices) {
                EXPECT_FALSE(t[i].is_special());
                EXPECT_TRUE(std::binary_search(all.begin(), all.end(), i));
            }
            EXPECT_TRUE(std::is_sorted(sel.indices.begin(), sel.indices.end()));
        }
    }
}
