#pragma once

// Deterministic synthetic scenes and analytic attention dumps with planted
// grounding structure. Everything here is seed-reproducible and independent of
// any trained model, so the whole pipeline can be checked against known answers.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnground/attnstore.hpp"
#include "attnground/errors.hpp"

namespace attnground {

enum class Shape { disk, square, bar };

inline std::string_view to_string(Shape s) {
    switch (s) {
        case Shape::disk: return "disk";
        case Shape::square: return "square";
        case Shape::bar: return "bar";
    }
    return "?";
}

inline Shape parse_shape(std::string_view s) {
    if (s == "disk") return Shape::disk;
    if (s == "square") return Shape::square;
    if (s == "bar") return Shape::bar;
    throw FormatError("unknown shape '" + std::string(s) + "'");
}

// Integer geometry on the canvas: the object occupies pixels whose centers fall
// inside the shape; its bounding box is [cx - half_w, cx + half_w) x [cy - half_h, cy + half_h).
struct SceneObject {
    Shape shape = Shape::disk;
    int cx = 32;
    int cy = 32;
    int size = 8;           // radius for disks, half side for squares, half length for bars
    bool vertical = false;  // bars only
    std::string word;  // concept word used in the caption

    int half_w() const { return shape == Shape::bar && vertical ? size / 2 : size; }
    int half_h() const { return shape == Shape::bar && !vertical ? size / 2 : size; }
    Box box() const { return {cx - half_w(), cy - half_h(), 2 * half_w(), 2 * half_h()}; }

    // Does the canvas point (x, y) lie inside the shape?
    bool covers(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        if (shape == Shape::disk) return dx * dx + dy * dy <= double(size) * size;
        return std::abs(dx) <= half_w() && std::abs(dy) <= half_h();
    }
    bool operator==(const SceneObject&) const = default;
};

struct SceneSpec {
    int canvas = 64;
    std::vector<SceneObject> objects;
    std::vector<TokenMeta> caption;
    std::vector<int> token_object;  // object referenced by each caption token, -1 for none
    uint64_t seed = 0;
    uint32_t n_max = 28;

    std::string text() const {
        std::string out;
        for (const auto& t : caption) {
            if (t.is_pad) break;
            if (!out.empty()) out += ' ';
            out += t.text;
        }
        return out;
    }
    bool operator==(const SceneSpec&) const = default;
};

inline constexpr uint32_t kDefaultNMax = 28;

// Position words split the canvas into fifths per axis.
inline const std::array<const char*, 5>& vertical_words() {
    static const std::array<const char*, 5> w{"top", "upper", "middle", "lower", "bottom"};
    return w;
}
inline const std::array<const char*, 5>& horizontal_words() {
    static const std::array<const char*, 5> w{"leftmost", "left", "central", "right", "rightmost"};
    return w;
}

inline std::string vertical_word(int cy, int canvas) {
    return vertical_words()[size_t(std::clamp(cy * 5 / canvas, 0, 4))];
}

inline std::string horizontal_word(int cx, int canvas) {
    return horizontal_words()[size_t(std::clamp(cx * 5 / canvas, 0, 4))];
}

// Builds a caption with per-token object references. Grammar:
//   [start] (there is)? obj ( and obj )* [end] [pad]...
//   obj := a (small|large)? <concept> (in|at) the <vertical> <horizontal>
inline void build_caption(SceneSpec& scene, std::mt19937_64& rng, uint32_t n_max) {
    scene.caption.clear();
    scene.token_object.clear();
    auto push = [&](std::string text, int obj, bool lexical, bool disease) {
        TokenMeta t;
        t.text = std::move(text);
        t.is_lexical = lexical;
        t.is_disease = disease;
        scene.caption.push_back(std::move(t));
        scene.token_object.push_back(obj);
    };
    TokenMeta start;
    start.text = "[start]";
    start.is_start = true;
    scene.caption.push_back(start);
    scene.token_object.push_back(-1);

    std::bernoulli_distribution coin(0.5);
    if (coin(rng)) {
        push("there", -1, false, false);
        push("is", -1, false, false);
    }
    for (size_t i = 0; i < scene.objects.size(); ++i) {
        const auto& o = scene.objects[i];
        const int idx = int(i);
        if (i > 0) push("and", -1, false, false);
        push("a", -1, false, false);
        if (coin(rng)) push(o.size <= 10 ? "small" : "large", idx, true, false);
        push(o.word, idx, true, true);
        push(coin(rng) ? "in" : "at", -1, false, false);
        push("the", -1, false, false);
        push(vertical_word(o.cy, scene.canvas), idx, true, false);
        push(horizontal_word(o.cx, scene.canvas), idx, true, false);
    }
    TokenMeta end;
    end.text = "[end]";
    end.is_end = true;
    scene.caption.push_back(end);
    scene.token_object.push_back(-1);
    if (scene.caption.size() > n_max) throw ArgumentError("caption longer than n_max");
    while (scene.caption.size() < n_max) {
        TokenMeta pad;
        pad.text = "[pad]";
        pad.is_pad = true;
        scene.caption.push_back(pad);
        scene.token_object.push_back(-1);
    }
    scene.n_max = n_max;
}

struct SceneOptions {
    int canvas = 64;
    int min_objects = 1;
    int max_objects = 3;
    int min_size = 8;
    int max_size = 14;
    int margin = 2;  // distance from canvas edge
    int gap = 4;     // minimum spacing between bounding boxes
    uint32_t n_max = kDefaultNMax;
};

inline bool boxes_too_close(const Box& a, const Box& b, int gap) {
    return a.x < b.x + b.w + gap && b.x < a.x + a.w + gap && a.y < b.y + b.h + gap && b.y < a.y + a.h + gap;
}

// Deterministic per seed: 1-3 non-overlapping objects plus a caption that mentions every object.
inline SceneSpec gen_scene(uint64_t seed, const SceneOptions& opt = {}) {
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + 0x5CE7E5u);
    SceneSpec scene;
    scene.canvas = opt.canvas;
    scene.seed = seed;
    std::uniform_int_distribution<int> count_d(opt.min_objects, opt.max_objects);
    std::uniform_int_distribution<int> shape_d(0, 2);
    std::uniform_int_distribution<int> size_d(opt.min_size / 2, opt.max_size / 2);  // even sizes only
    std::bernoulli_distribution coin(0.5);
    const int want = count_d(rng);
    for (int attempt = 0; attempt < 400 && int(scene.objects.size()) < want; ++attempt) {
        SceneObject o;
        o.shape = Shape(shape_d(rng));
        o.size = 2 * size_d(rng);
        o.vertical = o.shape == Shape::bar && coin(rng);
        o.word = std::string(to_string(o.shape));
        const int lo_x = opt.margin + o.half_w(), hi_x = opt.canvas - opt.margin - o.half_w();
        const int lo_y = opt.margin + o.half_h(), hi_y = opt.canvas - opt.margin - o.half_h();
        o.cx = std::uniform_int_distribution<int>(lo_x, hi_x)(rng);
        o.cy = std::uniform_int_distribution<int>(lo_y, hi_y)(rng);
        const bool clash = std::any_of(scene.objects.begin(), scene.objects.end(), [&](const SceneObject& p) {
            return boxes_too_close(p.box(), o.box(), opt.gap);
        });
        if (!clash) scene.objects.push_back(o);
    }
    build_caption(scene, rng, opt.n_max);
    return scene;
}

// Ground-truth boxes of all referenced objects, rescaled to a grid of side `grid`.
inline GroundTruthRegion scene_ground_truth(const SceneSpec& scene, int grid = 64) {
    GroundTruthRegion gt;
    gt.grid = grid;
    gt.category = scene.objects.empty() ? std::string("none") : scene.objects.front().word;
    const double s = double(grid) / scene.canvas;
    for (const auto& o : scene.objects) {
        const Box b = o.box();
        const int x0 = int(std::floor(b.x * s)), y0 = int(std::floor(b.y * s));
        const int x1 = int(std::ceil((b.x + b.w) * s)), y1 = int(std::ceil((b.y + b.h) * s));
        gt.boxes.push_back({x0, y0, std::max(1, x1 - x0), std::max(1, y1 - y0)});
    }
    return gt;
}

inline SampleInfo scene_sample_info(const SceneSpec& scene, int grid = 64) {
    return {"scene-" + std::to_string(scene.seed), scene.caption, scene_ground_truth(scene, grid)};
}

inline void to_json(nlohmann::json& j, const SceneObject& o) {
    j = {{"shape", to_string(o.shape)}, {"cx", o.cx},           {"cy", o.cy},
         {"size", o.size},              {"vertical", o.vertical}, {"concept", o.word}};
}
inline void from_json(const nlohmann::json& j, SceneObject& o) {
    o.shape = parse_shape(j.at("shape").get<std::string>());
    o.cx = j.at("cx").get<int>();
    o.cy = j.at("cy").get<int>();
    o.size = j.at("size").get<int>();
    o.vertical = j.value("vertical", false);
    o.word = j.value("concept", std::string(to_string(o.shape)));
}
inline void to_json(nlohmann::json& j, const SceneSpec& s) {
    j = {{"seed", s.seed},       {"canvas", s.canvas},   {"n_max", s.n_max},
         {"objects", s.objects}, {"caption", s.caption}, {"token_object", s.token_object}};
}
inline void from_json(const nlohmann::json& j, SceneSpec& s) {
    s.seed = j.at("seed").get<uint64_t>();
    s.canvas = j.at("canvas").get<int>();
    s.n_max = j.at("n_max").get<uint32_t>();
    s.objects = j.at("objects").get<std::vector<SceneObject>>();
    s.caption = j.at("caption").get<std::vector<TokenMeta>>();
    s.token_object = j.at("token_object").get<std::vector<int>>();
}

inline nlohmann::json encode_scene_file(const std::vector<SceneSpec>& scenes) {
    return {{"format", "attnground-scenes"}, {"version", 1}, {"scenes", scenes}};
}

inline std::vector<SceneSpec> decode_scene_file(const nlohmann::json& doc) {
    if (doc.value("format", std::string{}) != "attnground-scenes") throw FormatError("scenes: unknown format tag");
    try {
        return doc.at("scenes").get<std::vector<SceneSpec>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("scenes: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Oracle attention dumps

// Relationship between the text bias (noise run) and the image bias (start token).
enum class BiasAlignment { aligned, anti_correlated };
enum class OracleRun { gt_run, noise_run };

inline BiasAlignment parse_bias_alignment(std::string_view s) {
    if (s == "aligned") return BiasAlignment::aligned;
    if (s == "anti" || s == "anti-correlated" || s == "anti_correlated") return BiasAlignment::anti_correlated;
    throw ArgumentError("unknown bias alignment '" + std::string(s) + "'");
}

struct OracleConfig {
    double noise_sigma = 0.0;
    BiasAlignment bias_alignment = BiasAlignment::aligned;
    double comb_corruption = 0.0;  // fraction of each lexical map's mass moved to a decoy box
    uint32_t n_timesteps = 2;
    std::vector<uint32_t> native_resolutions{64, 64, 64};  // one entry per layer
    uint64_t seed = 0;

    // Planted-structure amplitudes (raw, before per-pixel token normalization).
    double region_blur = 0.0;   // Gaussian sigma on planted regions, canvas pixels
    double prior_blur = 6.0;    // sigma of the smooth object prior used for biases
    double lexical_gain = 1.0;
    double lexical_floor = 0.05;
    // The start token's post-normalization share is planted directly as floor + gain * bias,
    // so the image-bias map keeps its shape no matter how much mass other tokens claim.
    double start_floor = 0.3;
    double start_gain = 0.4;
    double function_level = 0.3;
    double function_ripple = 0.08;  // relative amplitude; max/min = (1+r)/(1-r)
    double pad_level = 0.02;
};

namespace detail {

inline std::vector<double> gaussian_blur(const std::vector<double>& img, int side, double sigma) {
    if (sigma <= 0) return img;
    const int radius = int(std::ceil(3 * sigma));
    std::vector<double> k(2 * radius + 1);
    double ks = 0;
    for (int i = -radius; i <= radius; ++i) ks += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (double& v : k) v /= ks;
    std::vector<double> tmp(img.size(), 0.0), out(img.size(), 0.0);
    for (int r = 0; r < side; ++r)
        for (int c = 0; c < side; ++c) {
            double acc = 0;
            for (int d = -radius; d <= radius; ++d) {
                const int cc = c + d;
                if (cc >= 0 && cc < side) acc += k[d + radius] * img[size_t(r) * side + cc];
            }
            tmp[size_t(r) * side + c] = acc;
        }
    for (int r = 0; r < side; ++r)
        for (int c = 0; c < side; ++c) {
            double acc = 0;
            for (int d = -radius; d <= radius; ++d) {
                const int rr = r + d;
                if (rr >= 0 && rr < side) acc += k[d + radius] * tmp[size_t(rr) * side + c];
            }
            out[size_t(r) * side + c] = acc;
        }
    return out;
}

inline std::vector<double> box_indicator(const Box& b, int side) {
    std::vector<double> m(size_t(side) * side, 0.0);
    for (int r = std::max(0, b.y); r < std::min(side, b.y + b.h); ++r)
        for (int c = std::max(0, b.x); c < std::min(side, b.x + b.w); ++c) m[size_t(r) * side + c] = 1.0;
    return m;
}

// Block-average a canvas map down to side n (canvas must be a multiple of n).
inline std::vector<double> area_downsample(const std::vector<double>& img, int side, int n) {
    if (n == side) return img;
    if (n < 1 || side % n != 0) throw ArgumentError("oracle: native resolution must divide the canvas");
    const int f = side / n;
    std::vector<double> out(size_t(n) * n, 0.0);
    for (int r = 0; r < side; ++r)
        for (int c = 0; c < side; ++c) out[size_t(r / f) * n + c / f] += img[size_t(r) * side + c];
    for (double& v : out) v /= double(f * f);
    return out;
}

inline void scale_to_unit_max(std::vector<double>& m) {
    const double hi = *std::max_element(m.begin(), m.end());
    if (hi > 0)
        for (double& v : m) v /= hi;
}

}  // namespace detail

// Canvas-resolution structure shared by every (timestep, layer) slice of a scene.
struct OracleLayout {
    int canvas = 64;
    std::vector<std::vector<double>> region;  // per object: planted region (optionally blurred)
    std::vector<std::vector<double>> decoy;   // per object: decoy region with the object's area
    std::vector<std::vector<double>> prior;   // per object: smooth prior, max 1
    std::vector<double> field;                // smooth prior of the union, max 1
    std::vector<Box> decoy_boxes;
};

inline OracleLayout oracle_layout(const SceneSpec& scene, const OracleConfig& cfg) {
    OracleLayout lay;
    lay.canvas = scene.canvas;
    const int side = scene.canvas;
    std::mt19937_64 rng(scene.seed * 0xD1B54A32D192ED03ull + cfg.seed + 17);
    std::vector<Box> taken;
    for (const auto& o : scene.objects) taken.push_back(o.box());
    lay.field.assign(size_t(side) * side, 0.0);
    for (const auto& o : scene.objects) {
        const Box b = o.box();
        lay.region.push_back(detail::gaussian_blur(detail::box_indicator(b, side), side, cfg.region_blur));
        auto pr = detail::gaussian_blur(detail::box_indicator(b, side), side, cfg.prior_blur);
        detail::scale_to_unit_max(pr);
        for (size_t i = 0; i < pr.size(); ++i) lay.field[i] = std::max(lay.field[i], pr[i]);
        lay.prior.push_back(std::move(pr));

        // Decoy: same-size box away from every object and previous decoy.
        Box d = b;
        for (int attempt = 0; attempt < 200; ++attempt) {
            Box cand{std::uniform_int_distribution<int>(0, side - b.w)(rng),
                     std::uniform_int_distribution<int>(0, side - b.h)(rng), b.w, b.h};
            const bool clash = std::any_of(taken.begin(), taken.end(),
                                           [&](const Box& t) { return boxes_too_close(t, cand, 2); });
            if (!clash) {
                d = cand;
                break;
            }
        }
        taken.push_back(d);
        lay.decoy_boxes.push_back(d);
        lay.decoy.push_back(detail::gaussian_blur(detail::box_indicator(d, side), side, cfg.region_blur));
    }
    return lay;
}

// Raw (pre-normalization) per-token maps for one slice at native side n, laid out [token][pixel].
inline std::vector<std::vector<double>> oracle_raw_maps(const SceneSpec& scene, const OracleLayout& lay,
                                                        const OracleConfig& cfg, OracleRun run, int n,
                                                        std::mt19937_64& rng) {
    const int side = lay.canvas;
    const size_t npix = size_t(n) * n;
    const size_t N = scene.caption.size();
    std::vector<std::vector<double>> raw(N, std::vector<double>(npix, 0.0));
    std::normal_distribution<double> gauss(0.0, 1.0);

    auto down = [&](const std::vector<double>& m) { return detail::area_downsample(m, side, n); };
    std::vector<double> field = down(lay.field);
    // The start token always leans toward the objects; the alignment setting
    // decides whether the noise-run text bias agrees with it or opposes it.
    const std::vector<double>& image_bias = field;

    std::vector<std::vector<double>> lexical_src(scene.objects.size());
    for (size_t o = 0; o < scene.objects.size(); ++o) {
        std::vector<double> m(npix);
        if (run == OracleRun::gt_run) {
            const auto rg = down(lay.region[o]);
            const auto dc = down(lay.decoy[o]);
            for (size_t p = 0; p < npix; ++p)
                m[p] = (1.0 - cfg.comb_corruption) * rg[p] + cfg.comb_corruption * dc[p];
        } else {
            const auto pr = down(lay.prior[o]);
            for (size_t p = 0; p < npix; ++p)
                m[p] = cfg.bias_alignment == BiasAlignment::aligned ? pr[p] : 1.0 - pr[p];
        }
        lexical_src[o] = std::move(m);
    }

    // Smooth ripple for function tokens: a plane wave with random phase and direction.
    std::uniform_real_distribution<double> uni(0.0, 2.0 * std::numbers::pi);
    std::vector<double> end_acc(npix, 0.0);
    size_t n_lex = 0;
    for (size_t k = 0; k < N; ++k) {
        const auto& tok = scene.caption[k];
        auto& m = raw[k];
        if (tok.is_start) {
            // filled below, once the other tokens are known
        } else if (tok.is_pad) {
            std::fill(m.begin(), m.end(), cfg.pad_level);
        } else if (tok.is_end) {
            // filled below
        } else if (tok.is_lexical && scene.token_object[k] >= 0) {
            const auto& src = lexical_src[size_t(scene.token_object[k])];
            for (size_t p = 0; p < npix; ++p) {
                double v = cfg.lexical_gain * (src[p] + cfg.lexical_floor);
                if (cfg.noise_sigma > 0) v += cfg.lexical_gain * cfg.noise_sigma * gauss(rng);
                m[p] = std::max(v, 0.0);
            }
            for (size_t p = 0; p < npix; ++p) end_acc[p] += m[p];
            ++n_lex;
        } else {
            const double phase = uni(rng), dir = uni(rng);
            const double fx = std::cos(dir), fy = std::sin(dir);
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < n; ++c) {
                    const double u = (fx * (c + 0.5) + fy * (r + 0.5)) / n * 2.0 * std::numbers::pi;
                    m[size_t(r) * n + c] = cfg.function_level * (1.0 + cfg.function_ripple * std::sin(u + phase));
                }
        }
    }
    for (size_t k = 0; k < N; ++k) {
        if (!scene.caption[k].is_end) continue;
        for (size_t p = 0; p < npix; ++p) raw[k][p] = n_lex ? end_acc[p] / double(n_lex) : cfg.pad_level;
    }
    for (size_t k = 0; k < N; ++k) {
        if (!scene.caption[k].is_start) continue;
        for (size_t p = 0; p < npix; ++p) {
            double rest = 0;
            for (size_t j = 0; j < N; ++j)
                if (j != k) rest += raw[j][p];
            const double share = std::clamp(cfg.start_floor + cfg.start_gain * image_bias[p], 0.0, 0.99);
            raw[k][p] = share / (1.0 - share) * rest;
        }
    }
    return raw;
}

// Attention dump (B = 1) for a scene. Timesteps are n_timesteps-1 ... 0.
inline AttentionDump gen_dump(const SceneSpec& scene, const OracleConfig& cfg, OracleRun run) {
    if (cfg.native_resolutions.empty()) throw ArgumentError("oracle: at least one layer required");
    if (cfg.noise_sigma < 0) throw ArgumentError("oracle: noise_sigma must be >= 0");
    if (cfg.comb_corruption < 0 || cfg.comb_corruption > 1) throw ArgumentError("oracle: corruption outside [0, 1]");
    if (scene.caption.size() != scene.token_object.size()) throw ArgumentError("oracle: caption/reference mismatch");
    if (cfg.n_timesteps < 1) throw ArgumentError("oracle: at least one timestep required");

    std::vector<int32_t> ts;
    for (int t = int(cfg.n_timesteps) - 1; t >= 0; --t) ts.push_back(t);
    std::vector<LayerInfo> layers;
    for (size_t l = 0; l < cfg.native_resolutions.size(); ++l) {
        const uint32_t n = cfg.native_resolutions[l];
        layers.push_back({uint32_t(l), n, n, n});
    }
    AttentionDump dump(1, ts, layers, uint32_t(scene.caption.size()));
    dump.attributes() = {{"source", "synthoracle"},
                         {"run", run == OracleRun::gt_run ? "gt" : "noise"},
                         {"scene_seed", scene.seed},
                         {"noise_sigma", cfg.noise_sigma},
                         {"comb_corruption", cfg.comb_corruption},
                         {"bias_alignment", cfg.bias_alignment == BiasAlignment::aligned ? "aligned" : "anti"}};

    const auto lay = oracle_layout(scene, cfg);
    std::mt19937_64 rng(scene.seed * 0xA24BAED4963EE407ull + cfg.seed * 7919 + (run == OracleRun::gt_run ? 1 : 2));
    for (size_t t = 0; t < ts.size(); ++t) {
        for (size_t l = 0; l < layers.size(); ++l) {
            const int n = int(layers[l].height);
            auto raw = oracle_raw_maps(scene, lay, cfg, run, n, rng);
            const size_t npix = size_t(n) * n;
            std::vector<double> z(npix, 0.0);
            for (const auto& m : raw)
                for (size_t p = 0; p < npix; ++p) z[p] += m[p];
            for (size_t k = 0; k < raw.size(); ++k) {
                auto s = dump.slice(0, t, l, k);
                for (size_t p = 0; p < npix; ++p) s[p] = float(raw[k][p] / z[p]);
            }
        }
    }
    return dump;
}

}  // namespace attnground
