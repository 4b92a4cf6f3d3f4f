#pragma once

// Checkpoint layout: magic "TDCK", u32 version, u32 header length, JSON header, then
// float32 raw parameters followed by float32 EMA parameters (little-endian).

#include <array>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnground/attnstore.hpp"
#include "attnground/toydiff/encoder.hpp"
#include "attnground/toydiff/schedule.hpp"
#include "attnground/toydiff/unet.hpp"

namespace attnground::toydiff {

inline constexpr std::array<char, 4> kCheckpointMagic{'T', 'D', 'C', 'K'};
inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    DenoiserConfig config;
    EncoderVariant encoder = EncoderVariant::grounded;
    int encoder_dim = 32;
    uint64_t encoder_seed = 0;
    double phrase_mix = 1.0;
    NoiseSchedule schedule = NoiseSchedule::linear();
    std::vector<float> params;
    std::vector<float> ema;
    nlohmann::json training;  // free-form: losses, timing, corpus description

    EncoderTable make_encoder_table() const { return make_encoder(encoder, encoder_dim, encoder_seed, phrase_mix); }

    // Builds the denoiser, loading EMA weights (or the raw ones when use_ema is false).
    UNet make_model(bool use_ema = true) const {
        UNet m(config);
        const auto& src = use_ema ? ema : params;
        if (src.size() != m.params().size())
            throw FormatError("checkpoint holds " + std::to_string(src.size()) + " parameters, architecture needs " +
                              std::to_string(m.params().size()));
        m.params().data() = src;
        return m;
    }
};

inline nlohmann::json checkpoint_header(const Checkpoint& c, const UNet& layout) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : layout.params().entries())
        entries.push_back({{"name", e.name}, {"offset", e.offset}, {"rows", e.rows}, {"cols", e.cols}});
    return {{"config", c.config},
            {"encoder", {{"variant", to_string(c.encoder)}, {"dim", c.encoder_dim}, {"seed", c.encoder_seed}, {"phrase_mix", c.phrase_mix}}},
            {"schedule", {{"T", c.schedule.T}, {"beta_start", c.schedule.beta_start}, {"beta_end", c.schedule.beta_end}}},
            {"n_params", c.params.size()},
            {"entries", entries},
            {"training", c.training}};
}

inline std::string encode_checkpoint(const Checkpoint& c) {
    const UNet layout(c.config);
    if (c.params.size() != layout.params().size() || c.ema.size() != c.params.size())
        throw ValidationError("checkpoint: parameter count does not match the configured architecture");
    const std::string header = checkpoint_header(c, layout).dump();
    std::string buf(kCheckpointMagic.begin(), kCheckpointMagic.end());
    detail::put(buf, kCheckpointVersion);
    detail::put(buf, uint32_t(header.size()));
    buf += header;
    const size_t off = buf.size();
    buf.resize(off + 2 * c.params.size() * sizeof(float));
    std::memcpy(buf.data() + off, c.params.data(), c.params.size() * sizeof(float));
    std::memcpy(buf.data() + off + c.params.size() * sizeof(float), c.ema.data(), c.ema.size() * sizeof(float));
    return buf;
}

inline Checkpoint decode_checkpoint(const std::string& data) {
    detail::Reader r(data);
    const std::string magic = r.bytes(4, "magic");
    if (magic != std::string(kCheckpointMagic.begin(), kCheckpointMagic.end()))
        throw FormatError("not a toy denoiser checkpoint (bad magic)");
    const auto version = r.get<uint32_t>("version");
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const auto hlen = r.get<uint32_t>("header length");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(r.bytes(hlen, "checkpoint header"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    Checkpoint c;
    try {
        c.config = h.at("config").get<DenoiserConfig>();
        c.encoder = parse_encoder_variant(h.at("encoder").at("variant").get<std::string>());
        c.encoder_dim = h.at("encoder").at("dim").get<int>();
        c.encoder_seed = h.at("encoder").at("seed").get<uint64_t>();
        c.phrase_mix = h.at("encoder").value("phrase_mix", 1.0);
        const auto& s = h.at("schedule");
        c.schedule = NoiseSchedule::linear(s.at("T").get<int>(), s.at("beta_start").get<double>(),
                                           s.at("beta_end").get<double>());
        c.training = h.value("training", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint header: ") + e.what());
    }
    const size_t n = h.at("n_params").get<size_t>();
    if (r.remaining() != 2 * n * sizeof(float))
        throw SizeMismatchError("checkpoint payload is " + std::to_string(r.remaining()) + " bytes, header promises " +
                                std::to_string(2 * n * sizeof(float)));
    c.params.resize(n);
    c.ema.resize(n);
    std::memcpy(c.params.data(), r.cursor(), n * sizeof(float));
    std::memcpy(c.ema.data(), r.cursor() + n * sizeof(float), n * sizeof(float));
    const UNet layout(c.config);
    if (layout.params().size() != n)
        throw FormatError("checkpoint parameter count does not match its own architecture");
    return c;
}

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    detail::write_atomically(path, encode_checkpoint(c));
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(detail::read_file(path));
}

}  // namespace attnground::toydiff
