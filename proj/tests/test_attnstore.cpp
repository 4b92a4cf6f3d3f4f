#include <cstring>
#include <fstream>

#include <gtest/gtest.h>

#include "attnground/attnstore.hpp"
#include "fixtures.hpp"

using namespace attnground;
using namespace fixtures;

namespace {

std::vector<SampleInfo> one_sample(uint32_t n_tokens) {
    std::vector<TokenMeta> t{start_tok()};
    for (uint32_t i = 1; i + 1 < n_tokens; ++i) t.push_back(tok("w" + std::to_string(i), true));
    t.push_back(end_tok());
    GroundTruthRegion gt{4, {{0, 0, 1, 1}}, "c"};
    return {{"s0", t, gt}};
}

uint32_t read_u32(const std::string& bytes, size_t off) {
    uint32_t v;
    std::memcpy(&v, bytes.data() + off, 4);
    return v;
}

}  // namespace

TEST(AttnStore, SmallRoundTripIsBitwise) {
    std::mt19937_64 rng(1);
    auto d = random_dump(rng, 1, {1, 0}, {{0, 2, 2, 2}}, 4);
    TempDir dir;
    write_dump(d, one_sample(4), dir / "a.gamd");
    auto loaded = read_dump(dir / "a.gamd");
    EXPECT_TRUE(loaded.dump.same_tensor(d));
    ASSERT_EQ(loaded.samples.size(), 1u);
    EXPECT_EQ(loaded.samples[0], one_sample(4)[0]);
}

TEST(AttnStore, RandomDumpsRoundTrip) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 25; ++trial) {
        const uint32_t B = 1 + rng() % 3, N = 3 + rng() % 6;
        std::vector<int32_t> ts;
        for (int t = int(rng() % 4); t >= 0; --t) ts.push_back(t * 7 + 1);
        std::vector<LayerInfo> layers;
        const uint32_t L = 1 + rng() % 3;
        for (uint32_t l = 0; l < L; ++l) {
            const uint32_t h = 1 + rng() % 6, w = 1 + rng() % 6;
            layers.push_back({l * 3 + 1, h, w, h});
        }
        auto d = random_dump(rng, B, ts, layers, N);
        d.attributes()["trial"] = trial;
        const auto bytes = encode_gamd(d);
        auto back = decode_gamd(bytes);
        EXPECT_TRUE(back.same_tensor(d));
        EXPECT_EQ(back.attributes(), d.attributes());
        EXPECT_EQ(encode_gamd(back), bytes);
    }
}

TEST(AttnStore, HeaderLayoutParsesByHand) {
    std::mt19937_64 rng(3);
    auto d = random_dump(rng, 1, {9, 4}, {{0, 16, 16, 16}, {1, 8, 8, 8}, {2, 4, 4, 4}}, 3);
    const auto bytes = encode_gamd(d);
    ASSERT_EQ(bytes.substr(0, 4), "GAMD");
    EXPECT_EQ(read_u32(bytes, 4), 1u);   // version
    EXPECT_EQ(read_u32(bytes, 8), 1u);   // B
    EXPECT_EQ(read_u32(bytes, 12), 2u);  // T
    EXPECT_EQ(int32_t(read_u32(bytes, 16)), 9);
    EXPECT_EQ(int32_t(read_u32(bytes, 20)), 4);
    EXPECT_EQ(read_u32(bytes, 24), 3u);  // L
    const uint32_t sides[3] = {16, 8, 4};
    for (int l = 0; l < 3; ++l) {
        const size_t off = 28 + 16 * size_t(l);
        EXPECT_EQ(read_u32(bytes, off), uint32_t(l));
        EXPECT_EQ(read_u32(bytes, off + 4), sides[l]);
        EXPECT_EQ(read_u32(bytes, off + 8), sides[l]);
    }
    EXPECT_EQ(read_u32(bytes, 76), 3u);  // N
    EXPECT_EQ(read_u32(bytes, 80), kDtypeFloat32);
    const uint32_t attr_len = read_u32(bytes, 84);
    const size_t payload = 88 + attr_len;
    EXPECT_EQ(bytes.size() - payload, d.values().size() * 4);
    float first;
    std::memcpy(&first, bytes.data() + payload, 4);
    EXPECT_EQ(first, d.values()[0]);
}

TEST(AttnStore, TokenSumViolationIsRejected) {
    std::mt19937_64 rng(4);
    auto d = random_dump(rng, 1, {1, 0}, {{0, 2, 2, 2}}, 4);
    d.slice(0, 1, 0, 2)[3] += 0.5f;
    try {
        d.validate();
        FAIL() << "expected a validation error";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("token softmax sum"), std::string::npos) << e.what();
    }
    TempDir dir;
    EXPECT_THROW(write_dump(d, one_sample(4), dir / "bad.gamd"), ValidationError);
    EXPECT_FALSE(std::filesystem::exists(dir / "bad.gamd"));
}

TEST(AttnStore, ToleranceBoundary) {
    AttentionDump d(1, {0}, {{0, 1, 1, 1}}, 2);
    d.values() = {0.5f, 0.5009f};
    EXPECT_NO_THROW(d.validate());
    d.values() = {0.5f, 0.502f};
    EXPECT_THROW(d.validate(), ValidationError);
}

TEST(AttnStore, OtherInvariants) {
    std::mt19937_64 rng(5);
    auto neg = random_dump(rng, 1, {0}, {{0, 2, 2, 2}}, 3);
    neg.values()[0] = -0.1f;
    EXPECT_THROW(neg.validate(), ValidationError);
    auto nan = random_dump(rng, 1, {0}, {{0, 2, 2, 2}}, 3);
    nan.values()[1] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_THROW(nan.validate(), ValidationError);
    auto order = random_dump(rng, 1, {0, 5}, {{0, 2, 2, 2}}, 3);
    EXPECT_THROW(order.validate(), ValidationError);
    auto dup = random_dump(rng, 1, {0}, {{0, 2, 2, 2}, {0, 1, 1, 1}}, 3);
    EXPECT_THROW(dup.validate(), ValidationError);
}

TEST(AttnStore, BadMagicAndVersion) {
    std::mt19937_64 rng(6);
    auto bytes = encode_gamd(random_dump(rng, 1, {0}, {{0, 2, 2, 2}}, 3));
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(decode_gamd(bad), FormatError);
    auto ver = bytes;
    ver[4] = 2;
    EXPECT_THROW(decode_gamd(ver), FormatError);
    EXPECT_THROW(decode_gamd(""), FormatError);
}

TEST(AttnStore, TruncationAndTrailingBytes) {
    std::mt19937_64 rng(7);
    auto d = random_dump(rng, 1, {1, 0}, {{0, 2, 2, 2}}, 4);
    TempDir dir;
    write_dump(d, one_sample(4), dir / "t.gamd");
    const auto full = std::filesystem::file_size(dir / "t.gamd");
    std::filesystem::resize_file(dir / "t.gamd", full - 1);
    EXPECT_THROW(read_dump(dir / "t.gamd"), SizeMismatchError);

    auto bytes = encode_gamd(d);
    EXPECT_THROW(decode_gamd(bytes.substr(0, 30)), SizeMismatchError);
    EXPECT_THROW(decode_gamd(bytes + "x"), SizeMismatchError);
}

TEST(AttnStore, MissingFileIsIoError) {
    TempDir dir;
    EXPECT_THROW(read_dump(dir / "nope.gamd"), IoError);
}

TEST(AttnStore, SidecarMismatchesAreRejected) {
    std::mt19937_64 rng(8);
    auto d = random_dump(rng, 1, {0}, {{0, 2, 2, 2}}, 4);
    TempDir dir;
    EXPECT_THROW(write_dump(d, one_sample(5), dir / "x.gamd"), ValidationError);
    auto two = one_sample(4);
    two.push_back(two[0]);
    EXPECT_THROW(write_dump(d, two, dir / "x.gamd"), ValidationError);
    auto bad_gt = one_sample(4);
    bad_gt[0].ground_truth->boxes[0] = {3, 3, 2, 2};
    EXPECT_THROW(write_dump(d, bad_gt, dir / "x.gamd"), ValidationError);
}

TEST(AttnStore, TokenInvariants) {
    EXPECT_NO_THROW(validate_tokens(patchy_lung()));
    auto no_end = patchy_lung();
    no_end.pop_back();
    EXPECT_THROW(validate_tokens(no_end), ValidationError);
    auto late_start = patchy_lung();
    std::swap(late_start[0], late_start[1]);
    EXPECT_THROW(validate_tokens(late_start), ValidationError);
    auto pad_mid = patchy_lung();
    pad_mid[2] = pad_tok();
    EXPECT_THROW(validate_tokens(pad_mid), ValidationError);
    auto word_after_end = patchy_lung();
    word_after_end.push_back(tok("x"));
    EXPECT_THROW(validate_tokens(word_after_end), ValidationError);
    auto lexical_special = patchy_lung();
    lexical_special[4].is_lexical = true;
    EXPECT_THROW(validate_tokens(lexical_special), ValidationError);
    auto padded = patchy_lung();
    padded.push_back(pad_tok());
    padded.push_back(pad_tok());
    EXPECT_NO_THROW(validate_tokens(padded));
}

TEST(AttnStore, SidecarJsonShape) {
    auto doc = encode_sidecar(one_sample(3));
    EXPECT_EQ(doc["format"], "gamd-sidecar");
    EXPECT_EQ(doc["samples"][0]["tokens"][1]["lexical"], true);
    EXPECT_EQ(doc["samples"][0]["ground_truth"]["boxes"][0], nlohmann::json::array({0, 0, 1, 1}));
    EXPECT_EQ(decode_sidecar(doc), one_sample(3));
    doc["format"] = "other";
    EXPECT_THROW(decode_sidecar(doc), FormatError);
}

TEST(AttnStore, ExtractSampleCopiesOneBatchEntry) {
    std::mt19937_64 rng(9);
    auto d = random_dump(rng, 3, {2, 1}, {{0, 3, 3, 3}, {1, 2, 2, 2}}, 4);
    auto s = d.extract_sample(2);
    for (size_t t = 0; t < 2; ++t)
        for (size_t l = 0; l < 2; ++l)
            for (size_t k = 0; k < 4; ++k) {
                auto a = d.slice(2, t, l, k), b = s.slice(0, t, l, k);
                EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
            }
}
