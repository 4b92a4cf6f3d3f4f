#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "attnground/activation_map.hpp"
#include "attnground/attnstore.hpp"
#include "attnground/errors.hpp"
#include "attnground/tokenfilter.hpp"

namespace attnground {

enum class UpsampleMode { nearest, bilinear };

struct AllTimesteps {};
// The last n timesteps in denoising order, i.e. the n least noisy ones.
struct LastTimesteps {
    size_t n = 1;
};
// Timestep values as stored in the dump header.
struct TimestepSet {
    std::vector<int32_t> values;
};
using TimestepPolicy = std::variant<AllTimesteps, LastTimesteps, TimestepSet>;

struct AllLayers {};
struct LayerSet {
    std::vector<uint32_t> layer_ids;
};
struct ResolutionLevels {
    std::vector<uint32_t> levels;
};
using LayerPolicy = std::variant<AllLayers, LayerSet, ResolutionLevels>;

struct ExtractionSpec {
    TimestepPolicy timesteps = AllTimesteps{};
    LayerPolicy layers = AllLayers{};
    TokenMode token_mode = TokenMode::lexical;
    int upsample_target = 64;
    UpsampleMode upsample_mode = UpsampleMode::bilinear;
    bool normalize = true;
};

// Resizes a native rows x cols grid to target x target. Axes scale independently.
template <class T>
std::vector<double> upsample(std::span<const T> src, int rows, int cols, int target, UpsampleMode mode) {
    if (rows < 1 || cols < 1 || src.size() != size_t(rows) * cols)
        throw ArgumentError("upsample: source size does not match rows x cols");
    if (target < rows || target < cols) throw ArgumentError("upsample: target smaller than native size (downsampling unsupported)");

    std::vector<double> out(size_t(target) * target);
    const double sy = double(rows) / target;
    const double sx = double(cols) / target;

    if (mode == UpsampleMode::nearest) {
        std::vector<int> col_src(target);
        for (int j = 0; j < target; ++j) col_src[j] = std::min(cols - 1, int(std::floor((j + 0.5) * sx)));
        for (int i = 0; i < target; ++i) {
            const int r = std::min(rows - 1, int(std::floor((i + 0.5) * sy)));
            for (int j = 0; j < target; ++j) out[size_t(i) * target + j] = double(src[size_t(r) * cols + col_src[j]]);
        }
        return out;
    }

    // Half-pixel centers, edges clamped.
    struct Tap {
        int lo, hi;
        double frac;
    };
    auto taps = [](int n_src, int n_dst, double scale) {
        std::vector<Tap> t(n_dst);
        for (int i = 0; i < n_dst; ++i) {
            double s = std::clamp((i + 0.5) * scale - 0.5, 0.0, double(n_src - 1));
            const int lo = int(std::floor(s));
            t[i] = {lo, std::min(lo + 1, n_src - 1), s - lo};
        }
        return t;
    };
    const auto ty = taps(rows, target, sy);
    const auto tx = taps(cols, target, sx);
    for (int i = 0; i < target; ++i) {
        const auto& a = ty[i];
        for (int j = 0; j < target; ++j) {
            const auto& b = tx[j];
            const double v00 = src[size_t(a.lo) * cols + b.lo];
            const double v01 = src[size_t(a.lo) * cols + b.hi];
            const double v10 = src[size_t(a.hi) * cols + b.lo];
            const double v11 = src[size_t(a.hi) * cols + b.hi];
            const double top = v00 + (v01 - v00) * b.frac;
            const double bot = v10 + (v11 - v10) * b.frac;
            out[size_t(i) * target + j] = top + (bot - top) * a.frac;
        }
    }
    return out;
}

inline ActivationMap upsample_map(const ActivationMap& m, int target, UpsampleMode mode) {
    ActivationMap out = ActivationMap::square(target, 0.0, m.provenance);
    out.values = upsample(std::span<const double>(m.values), m.rows, m.cols, target, mode);
    return out;
}

namespace detail {
template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;
}  // namespace detail

// Positions (indices into dump.timesteps()) selected by a policy.
inline std::vector<size_t> select_timesteps(const AttentionDump& dump, const TimestepPolicy& policy) {
    const size_t T = dump.n_timesteps();
    std::vector<size_t> out;
    std::visit(detail::overloaded{
                   [&](const AllTimesteps&) {
                       for (size_t i = 0; i < T; ++i) out.push_back(i);
                   },
                   [&](const LastTimesteps& p) {
                       if (p.n < 1 || p.n > T)
                           throw ArgumentError("timestep: last_n=" + std::to_string(p.n) + " outside [1, " +
                                               std::to_string(T) + "]");
                       for (size_t i = T - p.n; i < T; ++i) out.push_back(i);
                   },
                   [&](const TimestepSet& p) {
                       if (p.values.empty()) throw ArgumentError("timestep: explicit set is empty");
                       for (size_t i = 0; i < T; ++i)
                           if (std::find(p.values.begin(), p.values.end(), dump.timesteps()[i]) != p.values.end())
                               out.push_back(i);
                       for (int32_t v : p.values)
                           if (std::find(dump.timesteps().begin(), dump.timesteps().end(), v) ==
                               dump.timesteps().end())
                               throw ArgumentError("timestep: " + std::to_string(v) + " not present in dump");
                   },
               },
               policy);
    if (out.empty()) throw DegenerateInputError("timestep: selection is empty");
    return out;
}

inline std::vector<size_t> select_layers(const AttentionDump& dump, const LayerPolicy& policy) {
    std::vector<size_t> out;
    const auto& layers = dump.layers();
    std::visit(detail::overloaded{
                   [&](const AllLayers&) {
                       for (size_t i = 0; i < layers.size(); ++i) out.push_back(i);
                   },
                   [&](const LayerSet& p) {
                       if (p.layer_ids.empty()) throw ArgumentError("layer: explicit set is empty");
                       for (uint32_t id : p.layer_ids) {
                           auto it = std::find_if(layers.begin(), layers.end(),
                                                  [&](const LayerInfo& l) { return l.layer_id == id; });
                           if (it == layers.end())
                               throw ArgumentError("layer: id " + std::to_string(id) + " not present in dump");
                       }
                       for (size_t i = 0; i < layers.size(); ++i)
                           if (std::find(p.layer_ids.begin(), p.layer_ids.end(), layers[i].layer_id) !=
                               p.layer_ids.end())
                               out.push_back(i);
                   },
                   [&](const ResolutionLevels& p) {
                       if (p.levels.empty()) throw ArgumentError("layer: resolution-level set is empty");
                       for (size_t i = 0; i < layers.size(); ++i)
                           if (std::find(p.levels.begin(), p.levels.end(), layers[i].resolution_level) !=
                               p.levels.end())
                               out.push_back(i);
                   },
               },
               policy);
    if (out.empty()) throw DegenerateInputError("layer: selection is empty");
    return out;
}

inline void check_spec(const AttentionDump& dump, const ExtractionSpec& spec, size_t sample) {
    if (sample >= dump.batch_size())
        throw ArgumentError("sample index " + std::to_string(sample) + " out of range");
    for (const auto& l : dump.layers())
        if (int(l.height) > spec.upsample_target || int(l.width) > spec.upsample_target)
            throw ArgumentError("upsample target " + std::to_string(spec.upsample_target) +
                                " smaller than a native layer resolution");
}

// Mean over every selected (timestep, layer, token) slice after upsampling to the common grid.
inline ActivationMap extract_tokens(const AttentionDump& dump, std::span<const size_t> token_indices,
                                    const ExtractionSpec& spec, size_t sample, Provenance tag) {
    check_spec(dump, spec, sample);
    if (token_indices.empty()) throw DegenerateInputError("token: selection is empty");
    for (size_t k : token_indices)
        if (k >= dump.n_tokens()) throw ArgumentError("token index out of range");
    const auto ts = select_timesteps(dump, spec.timesteps);
    const auto ls = select_layers(dump, spec.layers);

    ActivationMap out = ActivationMap::square(spec.upsample_target, 0.0, tag);
    std::vector<double> native;
    for (size_t l : ls) {
        const auto& info = dump.layers()[l];
        native.assign(info.pixels(), 0.0);
        // Upsampling is linear, so summing at native resolution first is equivalent and cheaper.
        for (size_t t : ts)
            for (size_t k : token_indices) {
                auto s = dump.slice(sample, t, l, k);
                for (size_t p = 0; p < s.size(); ++p) native[p] += s[p];
            }
        const auto up = upsample(std::span<const double>(native), int(info.height), int(info.width),
                                 spec.upsample_target, spec.upsample_mode);
        for (size_t p = 0; p < up.size(); ++p) out.values[p] += up[p];
    }
    const double count = double(ts.size() * ls.size() * token_indices.size());
    for (double& v : out.values) v /= count;
    if (spec.normalize) normalize_in_place(out);
    return out;
}

// P_comb: average over selected timesteps, layers and filtered tokens.
inline ActivationMap extract_comb(const AttentionDump& dump, const std::vector<TokenMeta>& tokens,
                                  const ExtractionSpec& spec, size_t sample, TokenSelection* selection = nullptr) {
    if (tokens.size() != dump.n_tokens()) throw ArgumentError("token metadata length does not match dump");
    auto sel = select_tokens(tokens, spec.token_mode);
    auto map = extract_tokens(dump, sel.indices, spec, sample, Provenance::comb);
    if (selection) *selection = std::move(sel);
    return map;
}

// P_img: the start token's attention, averaged over selected timesteps and layers.
inline ActivationMap extract_img_bias(const AttentionDump& dump, const ExtractionSpec& spec, size_t sample) {
    const size_t start = 0;
    return extract_tokens(dump, std::span<const size_t>(&start, 1), spec, sample, Provenance::img);
}

// ---------------------------------------------------------------------------
// Textual policy forms, as used on the command line and in manifests:
//   timesteps: all | last:N | set:v1,v2,...
//   layers:    all | set:id1,id2,... | level:r1,r2,...

namespace detail {

template <class T>
std::vector<T> parse_list(std::string_view s, const char* what) {
    std::vector<T> out;
    size_t pos = 0;
    while (pos <= s.size()) {
        const size_t comma = std::min(s.find(',', pos), s.size());
        const std::string item(s.substr(pos, comma - pos));
        size_t used = 0;
        long long v = 0;
        try {
            v = std::stoll(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (item.empty() || used != item.size() || (std::is_unsigned_v<T> && v < 0))
            throw ArgumentError(std::string(what) + ": bad list item '" + item + "'");
        out.push_back(T(v));
        pos = comma + 1;
    }
    return out;
}

}  // namespace detail

inline UpsampleMode parse_upsample_mode(std::string_view s) {
    if (s == "bilinear") return UpsampleMode::bilinear;
    if (s == "nearest") return UpsampleMode::nearest;
    throw ArgumentError("unknown interpolation '" + std::string(s) + "'");
}

inline std::string_view to_string(UpsampleMode m) { return m == UpsampleMode::bilinear ? "bilinear" : "nearest"; }

inline TimestepPolicy parse_timestep_policy(std::string_view s) {
    if (s == "all") return AllTimesteps{};
    if (s.starts_with("last:")) {
        const auto v = detail::parse_list<long long>(s.substr(5), "timesteps");
        if (v.size() != 1 || v[0] < 1) throw ArgumentError("timesteps: last:N needs one positive N");
        return LastTimesteps{size_t(v[0])};
    }
    if (s.starts_with("set:")) return TimestepSet{detail::parse_list<int32_t>(s.substr(4), "timesteps")};
    throw ArgumentError("timesteps: expected all, last:N or set:..., got '" + std::string(s) + "'");
}

inline LayerPolicy parse_layer_policy(std::string_view s) {
    if (s == "all") return AllLayers{};
    if (s.starts_with("set:")) return LayerSet{detail::parse_list<uint32_t>(s.substr(4), "layers")};
    if (s.starts_with("level:")) return ResolutionLevels{detail::parse_list<uint32_t>(s.substr(6), "layers")};
    throw ArgumentError("layers: expected all, set:... or level:..., got '" + std::string(s) + "'");
}

inline std::string to_string(const TimestepPolicy& p) {
    auto join = [](const auto& v) {
        std::string out;
        for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
        return out;
    };
    return std::visit(detail::overloaded{[](const AllTimesteps&) { return std::string("all"); },
                                         [](const LastTimesteps& l) { return "last:" + std::to_string(l.n); },
                                         [&](const TimestepSet& t) { return "set:" + join(t.values); }},
                      p);
}

inline std::string to_string(const LayerPolicy& p) {
    auto join = [](const auto& v) {
        std::string out;
        for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
        return out;
    };
    return std::visit(detail::overloaded{[](const AllLayers&) { return std::string("all"); },
                                         [&](const LayerSet& l) { return "set:" + join(l.layer_ids); },
                                         [&](const ResolutionLevels& r) { return "level:" + join(r.levels); }},
                      p);
}

inline nlohmann::json spec_to_json(const ExtractionSpec& s) {
    return {{"timesteps", to_string(s.timesteps)},
            {"layers", to_string(s.layers)},
            {"tokens", to_string(s.token_mode)},
            {"upsample", s.upsample_target},
            {"interp", to_string(s.upsample_mode)},
            {"normalize", s.normalize}};
}

}  // namespace attnground
