#pragma once

// GAMD attention-dump container plus its JSON sidecar.
//
// Binary layout (little-endian, no padding), see docs/gamd_format.md:
//
//   char[4]  magic "GAMD"
//   u32      format version (1)
//   u32      B                      batch size
//   u32      T                      number of timesteps
//   i32[T]   timesteps              strictly decreasing (denoising order)
//   u32      L                      number of layers
//   L x { u32 layer_id, u32 height, u32 width, u32 resolution_level }
//   u32      N                      tokens per sample (N_max)
//   u32      dtype                  1 = float32
//   u32      attr_len
//   u8[attr_len]                    JSON object with run attributes (may be empty)
//   f32[...] values                 [b][t][l][token][row][col], each layer at its
//                                   native height x width
//
// The sidecar `<dump>.json` carries per-sample token metadata and ground truth.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnground/errors.hpp"

namespace attnground {

static_assert(std::endian::native == std::endian::little, "GAMD I/O assumes a little-endian host");

inline constexpr std::array<char, 4> kGamdMagic{'G', 'A', 'M', 'D'};
inline constexpr uint32_t kGamdVersion = 1;
inline constexpr uint32_t kDtypeFloat32 = 1;
inline constexpr double kSoftmaxSumTolerance = 1e-3;

struct LayerInfo {
    uint32_t layer_id = 0;
    uint32_t height = 1;
    uint32_t width = 1;
    uint32_t resolution_level = 0;

    size_t pixels() const { return size_t(height) * width; }
    bool operator==(const LayerInfo&) const = default;
};

struct TokenMeta {
    std::string text;
    bool is_start = false;
    bool is_end = false;
    bool is_pad = false;
    bool is_lexical = false;
    bool is_disease = false;

    bool is_special() const { return is_start || is_end || is_pad; }
    bool operator==(const TokenMeta&) const = default;
};

// Axis-aligned box in map-grid cells: covers columns [x, x+w) and rows [y, y+h).
struct Box {
    int x = 0;
    int y = 0;
    int w = 1;
    int h = 1;

    bool contains(int row, int col) const { return col >= x && col < x + w && row >= y && row < y + h; }
    bool operator==(const Box&) const = default;
};

struct GroundTruthRegion {
    int grid = 64;  // side of the square grid the boxes live on
    std::vector<Box> boxes;
    std::string category;

    bool contains(int row, int col) const {
        return std::any_of(boxes.begin(), boxes.end(), [&](const Box& b) { return b.contains(row, col); });
    }
    bool operator==(const GroundTruthRegion&) const = default;
};

struct SampleInfo {
    std::string id;
    std::vector<TokenMeta> tokens;
    std::optional<GroundTruthRegion> ground_truth;

    bool operator==(const SampleInfo&) const = default;
};

class AttentionDump {
  public:
    AttentionDump() = default;

    // Allocates a zero-filled tensor for the given shape.
    AttentionDump(uint32_t batch_size, std::vector<int32_t> timesteps, std::vector<LayerInfo> layers,
                  uint32_t n_tokens)
        : batch_size_(batch_size), timesteps_(std::move(timesteps)), layers_(std::move(layers)),
          n_tokens_(n_tokens) {
        compute_offsets();
        values_.assign(expected_value_count(), 0.0f);
    }

    uint32_t batch_size() const { return batch_size_; }
    size_t n_timesteps() const { return timesteps_.size(); }
    size_t n_layers() const { return layers_.size(); }
    uint32_t n_tokens() const { return n_tokens_; }
    const std::vector<int32_t>& timesteps() const { return timesteps_; }
    const std::vector<LayerInfo>& layers() const { return layers_; }
    const std::vector<float>& values() const { return values_; }
    std::vector<float>& values() { return values_; }

    nlohmann::json& attributes() { return attributes_; }
    const nlohmann::json& attributes() const { return attributes_; }

    size_t expected_value_count() const { return size_t(batch_size_) * timesteps_.size() * block_size_; }

    // Native-resolution map of one token, row-major.
    std::span<const float> slice(size_t sample, size_t t, size_t layer, size_t token) const {
        return {values_.data() + offset(sample, t, layer, token), layers_[layer].pixels()};
    }
    std::span<float> slice(size_t sample, size_t t, size_t layer, size_t token) {
        return {values_.data() + offset(sample, t, layer, token), layers_[layer].pixels()};
    }

    // All tokens of one (sample, timestep, layer), laid out [token][row][col].
    std::span<float> layer_block(size_t sample, size_t t, size_t layer) {
        return {values_.data() + offset(sample, t, layer, 0), layers_[layer].pixels() * n_tokens_};
    }

    bool same_tensor(const AttentionDump& other) const {
        return batch_size_ == other.batch_size_ && timesteps_ == other.timesteps_ && layers_ == other.layers_ &&
               n_tokens_ == other.n_tokens_ && values_.size() == other.values_.size() &&
               std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(float)) == 0;
    }

    // Single-sample view copied out of a batched dump.
    AttentionDump extract_sample(size_t sample) const {
        AttentionDump out(1, timesteps_, layers_, n_tokens_);
        const size_t per_sample = timesteps_.size() * block_size_;
        std::copy_n(values_.begin() + sample * per_sample, per_sample, out.values_.begin());
        out.attributes_ = attributes_;
        return out;
    }

    void validate() const;

  private:
    void compute_offsets() {
        layer_offsets_.clear();
        block_size_ = 0;
        for (const auto& l : layers_) {
            layer_offsets_.push_back(block_size_);
            block_size_ += l.pixels() * n_tokens_;
        }
    }

    size_t offset(size_t sample, size_t t, size_t layer, size_t token) const {
        return (sample * timesteps_.size() + t) * block_size_ + layer_offsets_[layer] +
               token * layers_[layer].pixels();
    }

    uint32_t batch_size_ = 0;
    std::vector<int32_t> timesteps_;
    std::vector<LayerInfo> layers_;
    uint32_t n_tokens_ = 0;
    std::vector<float> values_;
    nlohmann::json attributes_ = nlohmann::json::object();

    std::vector<size_t> layer_offsets_;
    size_t block_size_ = 0;
};

inline void AttentionDump::validate() const {
    if (batch_size_ < 1) throw ValidationError("batch: batch size must be >= 1");
    if (timesteps_.empty()) throw ValidationError("timestep: at least one timestep required");
    for (size_t i = 1; i < timesteps_.size(); ++i) {
        if (timesteps_[i] >= timesteps_[i - 1])
            throw ValidationError("timestep: timesteps must be strictly decreasing");
    }
    if (layers_.empty()) throw ValidationError("layer: at least one layer required");
    for (size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].height < 1 || layers_[i].width < 1)
            throw ValidationError("layer: native resolution must be at least 1x1");
        for (size_t j = 0; j < i; ++j) {
            if (layers_[j].layer_id == layers_[i].layer_id)
                throw ValidationError("layer: duplicate layer id " + std::to_string(layers_[i].layer_id));
        }
    }
    if (n_tokens_ < 1) throw ValidationError("token: at least one token required");
    if (values_.size() != expected_value_count())
        throw ValidationError("values: tensor holds " + std::to_string(values_.size()) + " floats, shape needs " +
                              std::to_string(expected_value_count()));

    for (size_t b = 0; b < batch_size_; ++b) {
        for (size_t t = 0; t < timesteps_.size(); ++t) {
            for (size_t l = 0; l < layers_.size(); ++l) {
                const size_t npix = layers_[l].pixels();
                const float* base = values_.data() + offset(b, t, l, 0);
                for (size_t p = 0; p < npix; ++p) {
                    double sum = 0.0;
                    for (size_t k = 0; k < n_tokens_; ++k) {
                        const float v = base[k * npix + p];
                        if (!std::isfinite(v) || v < 0.0f) {
                            std::ostringstream msg;
                            msg << "value: non-finite or negative attention at sample " << b << ", timestep " << t
                                << ", layer " << l << ", token " << k << ", pixel " << p;
                            throw ValidationError(msg.str());
                        }
                        sum += v;
                    }
                    if (std::abs(sum - 1.0) > kSoftmaxSumTolerance) {
                        std::ostringstream msg;
                        msg << "token softmax sum " << sum << " outside 1 +/- " << kSoftmaxSumTolerance
                            << " at sample " << b << ", timestep " << t << ", layer " << l << ", pixel " << p;
                        throw ValidationError(msg.str());
                    }
                }
            }
        }
    }
}

inline void validate_tokens(const std::vector<TokenMeta>& tokens) {
    if (tokens.empty()) throw ValidationError("token: empty token list");
    if (!tokens[0].is_start) throw ValidationError("token: index 0 must be the start token");
    std::optional<size_t> end_index;
    for (size_t i = 0; i < tokens.size(); ++i) {
        const auto& tok = tokens[i];
        const int kinds = int(tok.is_start) + int(tok.is_end) + int(tok.is_pad);
        if (kinds > 1) throw ValidationError("token: token " + std::to_string(i) + " has several special roles");
        if (tok.is_special() && (tok.is_lexical || tok.is_disease))
            throw ValidationError("token: special token " + std::to_string(i) + " flagged lexical or disease");
        if (tok.is_start && i != 0) throw ValidationError("token: more than one start token");
        if (tok.is_end) {
            if (end_index) throw ValidationError("token: more than one end token");
            end_index = i;
        }
        if (end_index && i > *end_index && !tok.is_pad)
            throw ValidationError("token: token " + std::to_string(i) + " after the end token is not padding");
        if (tok.is_pad && !end_index) throw ValidationError("token: padding before the end token");
    }
    if (!end_index) throw ValidationError("token: missing end token");
}

inline void validate_ground_truth(const GroundTruthRegion& gt) {
    if (gt.grid < 1) throw ValidationError("ground truth: grid side must be >= 1");
    if (gt.boxes.empty()) throw ValidationError("ground truth: at least one box required");
    for (const auto& b : gt.boxes) {
        if (b.w < 1 || b.h < 1) throw ValidationError("ground truth: box width and height must be >= 1");
        if (b.x < 0 || b.y < 0 || b.x + b.w > gt.grid || b.y + b.h > gt.grid)
            throw ValidationError("ground truth: box lies outside the grid");
    }
}

// ---------------------------------------------------------------------------
// JSON (sidecar) conversions

inline void to_json(nlohmann::json& j, const TokenMeta& t) {
    j = {{"text", t.text},         {"start", t.is_start},     {"end", t.is_end},
         {"pad", t.is_pad},        {"lexical", t.is_lexical}, {"disease", t.is_disease}};
}
inline void from_json(const nlohmann::json& j, TokenMeta& t) {
    t.text = j.at("text").get<std::string>();
    t.is_start = j.value("start", false);
    t.is_end = j.value("end", false);
    t.is_pad = j.value("pad", false);
    t.is_lexical = j.value("lexical", false);
    t.is_disease = j.value("disease", false);
}
inline void to_json(nlohmann::json& j, const Box& b) { j = nlohmann::json::array({b.x, b.y, b.w, b.h}); }
inline void from_json(const nlohmann::json& j, Box& b) {
    if (!j.is_array() || j.size() != 4) throw FormatError("sidecar: box must be [x, y, w, h]");
    b = {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}
inline void to_json(nlohmann::json& j, const GroundTruthRegion& g) {
    j = {{"grid", g.grid}, {"category", g.category}, {"boxes", g.boxes}};
}
inline void from_json(const nlohmann::json& j, GroundTruthRegion& g) {
    g.grid = j.at("grid").get<int>();
    g.category = j.value("category", std::string{});
    g.boxes = j.at("boxes").get<std::vector<Box>>();
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& dump_path) {
    auto p = dump_path;
    p += ".json";
    return p;
}

// ---------------------------------------------------------------------------
// Binary I/O

namespace detail {

template <class T>
void put(std::string& buf, T v) {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf.append(raw, sizeof(T));
}

class Reader {
  public:
    explicit Reader(const std::string& data) : data_(data) {}

    template <class T>
    T get(const char* what) {
        if (pos_ + sizeof(T) > data_.size()) throw SizeMismatchError(std::string("truncated header reading ") + what);
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string bytes(size_t n, const char* what) {
        if (pos_ + n > data_.size()) throw SizeMismatchError(std::string("truncated header reading ") + what);
        std::string out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    size_t remaining() const { return data_.size() - pos_; }
    const char* cursor() const { return data_.data() + pos_; }

  private:
    const std::string& data_;
    size_t pos_ = 0;
};

// Writes to a temporary sibling then renames, so readers never observe partial files.
inline void write_atomically(const std::filesystem::path& path, const std::string& bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), std::streamsize(bytes.size()));
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
    }
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("read failed for " + path.string());
    return std::move(ss).str();
}

}  // namespace detail

inline std::string encode_gamd(const AttentionDump& dump) {
    std::string buf;
    buf.reserve(64 + dump.values().size() * sizeof(float));
    buf.append(kGamdMagic.data(), kGamdMagic.size());
    detail::put<uint32_t>(buf, kGamdVersion);
    detail::put<uint32_t>(buf, dump.batch_size());
    detail::put<uint32_t>(buf, uint32_t(dump.n_timesteps()));
    for (int32_t t : dump.timesteps()) detail::put<int32_t>(buf, t);
    detail::put<uint32_t>(buf, uint32_t(dump.n_layers()));
    for (const auto& l : dump.layers()) {
        detail::put<uint32_t>(buf, l.layer_id);
        detail::put<uint32_t>(buf, l.height);
        detail::put<uint32_t>(buf, l.width);
        detail::put<uint32_t>(buf, l.resolution_level);
    }
    detail::put<uint32_t>(buf, dump.n_tokens());
    detail::put<uint32_t>(buf, kDtypeFloat32);
    const std::string attrs = dump.attributes().empty() ? std::string{} : dump.attributes().dump();
    detail::put<uint32_t>(buf, uint32_t(attrs.size()));
    buf += attrs;
    buf.append(reinterpret_cast<const char*>(dump.values().data()), dump.values().size() * sizeof(float));
    return buf;
}

inline AttentionDump decode_gamd(const std::string& data) {
    detail::Reader r(data);
    const std::string magic = r.bytes(4, "magic");
    if (std::memcmp(magic.data(), kGamdMagic.data(), 4) != 0) throw FormatError("not a GAMD file (bad magic)");
    const auto version = r.get<uint32_t>("version");
    if (version != kGamdVersion) throw FormatError("unsupported GAMD version " + std::to_string(version));
    const auto batch = r.get<uint32_t>("batch size");
    const auto n_t = r.get<uint32_t>("timestep count");
    if (n_t > r.remaining() / sizeof(int32_t)) throw SizeMismatchError("truncated header reading timesteps");
    std::vector<int32_t> timesteps(n_t);
    for (auto& t : timesteps) t = r.get<int32_t>("timesteps");
    const auto n_l = r.get<uint32_t>("layer count");
    if (n_l > r.remaining() / (4 * sizeof(uint32_t))) throw SizeMismatchError("truncated header reading layers");
    std::vector<LayerInfo> layers(n_l);
    for (auto& l : layers) {
        l.layer_id = r.get<uint32_t>("layer id");
        l.height = r.get<uint32_t>("layer height");
        l.width = r.get<uint32_t>("layer width");
        l.resolution_level = r.get<uint32_t>("resolution level");
    }
    const auto n_tok = r.get<uint32_t>("token count");
    const auto dtype = r.get<uint32_t>("dtype");
    if (dtype != kDtypeFloat32) throw FormatError("unsupported dtype code " + std::to_string(dtype));
    const auto attr_len = r.get<uint32_t>("attribute length");
    const std::string attrs = r.bytes(attr_len, "attributes");

    // Check the payload size before allocating, so a corrupt header cannot request gigabytes.
    size_t block = 0;
    for (const auto& l : layers) block += l.pixels();
    const long double want_ld = static_cast<long double>(batch) * n_t * block * n_tok * sizeof(float);
    if (want_ld != static_cast<long double>(r.remaining()))
        throw SizeMismatchError("payload holds " + std::to_string(r.remaining()) + " bytes, header promises " +
                                std::to_string(static_cast<unsigned long long>(want_ld)));

    AttentionDump dump(batch, std::move(timesteps), std::move(layers), n_tok);
    if (!attrs.empty()) {
        try {
            dump.attributes() = nlohmann::json::parse(attrs);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("malformed attribute block: ") + e.what());
        }
    }
    const size_t want = dump.values().size() * sizeof(float);
    if (r.remaining() != want)
        throw SizeMismatchError("payload holds " + std::to_string(r.remaining()) + " bytes, header promises " +
                                std::to_string(want));
    std::memcpy(dump.values().data(), r.cursor(), want);
    return dump;
}

inline AttentionDump read_gamd(const std::filesystem::path& path) { return decode_gamd(detail::read_file(path)); }

inline nlohmann::json encode_sidecar(const std::vector<SampleInfo>& samples) {
    nlohmann::json doc = {{"format", "gamd-sidecar"}, {"version", kGamdVersion}};
    auto& arr = doc["samples"] = nlohmann::json::array();
    for (const auto& s : samples) {
        nlohmann::json js = {{"id", s.id}, {"tokens", s.tokens}};
        js["ground_truth"] = s.ground_truth ? nlohmann::json(*s.ground_truth) : nlohmann::json(nullptr);
        arr.push_back(std::move(js));
    }
    return doc;
}

inline std::vector<SampleInfo> decode_sidecar(const nlohmann::json& doc) {
    if (doc.value("format", std::string{}) != "gamd-sidecar") throw FormatError("sidecar: unknown format tag");
    std::vector<SampleInfo> out;
    try {
        for (const auto& js : doc.at("samples")) {
            SampleInfo s;
            s.id = js.value("id", std::string{});
            s.tokens = js.at("tokens").get<std::vector<TokenMeta>>();
            if (js.contains("ground_truth") && !js["ground_truth"].is_null())
                s.ground_truth = js["ground_truth"].get<GroundTruthRegion>();
            out.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("sidecar: ") + e.what());
    }
    return out;
}

inline void validate_samples(const AttentionDump& dump, const std::vector<SampleInfo>& samples) {
    if (samples.size() != dump.batch_size())
        throw ValidationError("batch: sidecar lists " + std::to_string(samples.size()) + " samples, dump has " +
                              std::to_string(dump.batch_size()));
    for (const auto& s : samples) {
        if (s.tokens.size() != dump.n_tokens())
            throw ValidationError("token: sample '" + s.id + "' has " + std::to_string(s.tokens.size()) +
                                  " tokens, dump has " + std::to_string(dump.n_tokens()));
        validate_tokens(s.tokens);
        if (s.ground_truth) validate_ground_truth(*s.ground_truth);
    }
}

// Stacks dumps of identical shape (timesteps, layers, tokens) along the batch axis.
// Attributes are taken from the first.
inline AttentionDump concat_samples(const std::vector<AttentionDump>& parts) {
    if (parts.empty()) throw ArgumentError("concat: no dumps");
    const auto& f = parts.front();
    uint32_t B = 0;
    for (const auto& p : parts) {
        if (p.timesteps() != f.timesteps() || p.layers() != f.layers() || p.n_tokens() != f.n_tokens())
            throw ValidationError("concat: dumps differ in timesteps, layers or token count");
        B += p.batch_size();
    }
    AttentionDump out(B, f.timesteps(), f.layers(), f.n_tokens());
    auto it = out.values().begin();
    for (const auto& p : parts) it = std::copy(p.values().begin(), p.values().end(), it);
    out.attributes() = f.attributes();
    return out;
}

struct LoadedDump {
    AttentionDump dump;
    std::vector<SampleInfo> samples;
};

inline void write_dump(const AttentionDump& dump, const std::vector<SampleInfo>& samples,
                       const std::filesystem::path& path) {
    dump.validate();
    validate_samples(dump, samples);
    detail::write_atomically(path, encode_gamd(dump));
    detail::write_atomically(sidecar_path(path), encode_sidecar(samples).dump(2) + "\n");
}

inline LoadedDump read_dump(const std::filesystem::path& path) {
    LoadedDump out{read_gamd(path), {}};
    out.dump.validate();
    const auto side = sidecar_path(path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(detail::read_file(side));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("sidecar " + side.string() + ": " + e.what());
    }
    out.samples = decode_sidecar(doc);
    validate_samples(out.dump, out.samples);
    return out;
}

}  // namespace attnground
