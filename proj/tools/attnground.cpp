// Command-line front end: every stage reads and writes files so stages can be swapped or
// fed from outside (e.g. dumps exported from a full-scale model).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "attnground/attnstore.hpp"
#include "attnground/bbm.hpp"
#include "attnground/extraction.hpp"
#include "attnground/mapfile.hpp"
#include "attnground/masking.hpp"
#include "attnground/metrics.hpp"
#include "attnground/overlay.hpp"
#include "attnground/synthoracle.hpp"
#include "attnground/toydiff/checkpoint.hpp"
#include "attnground/toydiff/sample.hpp"
#include "attnground/toydiff/train.hpp"
#include "attnground/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace attnground;

namespace {

uint64_t fnv1a(const std::string& bytes) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// "0..99", "3,5,8" or "7"; ranges are inclusive.
std::vector<uint64_t> parse_seeds(const std::string& s) {
    std::vector<uint64_t> out;
    std::stringstream ss(s);
    std::string part;
    auto num = [&](const std::string& t) {
        size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(t, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (t.empty() || used != t.size()) throw ArgumentError("seeds: bad number '" + t + "'");
        return uint64_t(v);
    };
    while (std::getline(ss, part, ',')) {
        const auto dots = part.find("..");
        if (dots == std::string::npos) {
            out.push_back(num(part));
            continue;
        }
        const uint64_t a = num(part.substr(0, dots)), b = num(part.substr(dots + 2));
        if (b < a) throw ArgumentError("seeds: empty range '" + part + "'");
        if (b - a > 10'000'000) throw ArgumentError("seeds: range too large");
        for (uint64_t v = a; v <= b; ++v) out.push_back(v);
    }
    if (out.empty()) throw ArgumentError("seeds: no seeds given");
    return out;
}

// Tracks files a command creates; unless committed, they are deleted on the way out so a
// failed command leaves nothing half-written behind.
class Outputs {
  public:
    ~Outputs() {
        if (committed_) return;
        std::error_code ec;
        for (const auto& p : paths_) {
            fs::remove(p, ec);
            auto tmp = p;
            tmp += ".tmp";
            fs::remove(tmp, ec);
        }
        for (const auto& d : dirs_) fs::remove(d, ec);  // only succeeds if empty
    }
    const fs::path& add(fs::path p) { return paths_.emplace_back(std::move(p)); }
    void add_dir(const fs::path& d) {
        if (!fs::exists(d)) {
            fs::create_directories(d);
            dirs_.push_back(d);
        }
    }
    const std::vector<fs::path>& paths() const { return paths_; }
    void commit() { committed_ = true; }

  private:
    std::vector<fs::path> paths_;
    std::vector<fs::path> dirs_;
    bool committed_ = false;
};

struct Invocation {
    std::string command;
    std::vector<std::string> argv;
    json options = json::object();
    json inputs = json::array();

    void input(const fs::path& p) {
        const std::string bytes = detail::read_file(p);
        char hex[17];
        std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
        inputs.push_back({{"path", p.string()}, {"bytes", bytes.size()}, {"fnv1a64", hex}});
    }

    // Manifest content is a pure function of the inputs and flags, so reruns reproduce it too.
    void write_manifest(const fs::path& path, Outputs& outs) {
        json out_list = json::array();
        for (const auto& p : outs.paths()) out_list.push_back(p.string());
        const json doc = {{"tool", "attnground"},
                          {"version", kVersion},
                          {"gamd_version", kGamdVersion},
                          {"command", command},
                          {"argv", argv},
                          {"options", options},
                          {"inputs", inputs},
                          {"outputs", out_list}};
        write_json_file(outs.add(path), doc);
    }
};

fs::path manifest_for(const fs::path& out) {
    auto m = out;
    m += ".manifest.json";
    return m;
}

std::vector<SceneSpec> load_scenes(const fs::path& p, Invocation& inv) {
    inv.input(p);
    return decode_scene_file(read_json_file(p));
}

LoadedDump load_dump(const fs::path& p, Invocation& inv) {
    inv.input(p);
    inv.input(sidecar_path(p));
    return read_dump(p);
}

MapFile load_maps(const fs::path& p, Invocation& inv) {
    inv.input(p);
    return decode_map_file(read_json_file(p));
}

struct ExtractFlags {
    std::string timesteps = "all";
    std::string layers = "all";
    std::string tokens = "lexical";
    int upsample = 64;
    std::string interp = "bilinear";

    void add_to(CLI::App* sub) {
        sub->add_option("--timesteps", timesteps, "all | last:N | set:t1,t2,...")->capture_default_str();
        sub->add_option("--layers", layers, "all | set:id,... | level:res,...")->capture_default_str();
        sub->add_option("--tokens", tokens, "lexical | disease | end | all")->capture_default_str();
        sub->add_option("--upsample", upsample, "common map side")->capture_default_str();
        sub->add_option("--interp", interp, "bilinear | nearest")->capture_default_str();
    }
    ExtractionSpec spec() const {
        ExtractionSpec s;
        s.timesteps = parse_timestep_policy(timesteps);
        s.layers = parse_layer_policy(layers);
        s.token_mode = parse_token_mode(tokens);
        if (upsample < 1) throw ArgumentError("--upsample must be positive");
        s.upsample_target = upsample;
        s.upsample_mode = parse_upsample_mode(interp);
        return s;
    }
};

// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string seeds;
    fs::path out;
    double noise = 0.0;
    std::string bias = "aligned";
    double corruption = 0.0;
    uint32_t timesteps = 2;
    uint64_t oracle_seed = 0;
    bool scenes_only = false;
};

void run_synth(const SynthArgs& a, Invocation& inv) {
    const auto seeds = parse_seeds(a.seeds);
    OracleConfig cfg;
    cfg.noise_sigma = a.noise;
    cfg.bias_alignment = parse_bias_alignment(a.bias);
    cfg.comb_corruption = a.corruption;
    cfg.n_timesteps = a.timesteps;
    cfg.seed = a.oracle_seed;
    inv.options = {{"seeds", a.seeds},      {"noise", a.noise},         {"bias", a.bias},
                   {"corruption", a.corruption}, {"timesteps", a.timesteps}, {"oracle_seed", a.oracle_seed},
                   {"scenes_only", a.scenes_only}};

    Outputs outs;
    outs.add_dir(a.out);
    std::vector<SceneSpec> scenes;
    std::vector<SampleInfo> infos;
    for (uint64_t s : seeds) {
        scenes.push_back(gen_scene(s));
        infos.push_back(scene_sample_info(scenes.back()));
    }
    write_json_file(outs.add(a.out / "scenes.json"), encode_scene_file(scenes));
    if (!a.scenes_only) {
        for (auto run : {OracleRun::gt_run, OracleRun::noise_run}) {
            std::vector<AttentionDump> parts;
            for (const auto& sc : scenes) parts.push_back(gen_dump(sc, cfg, run));
            const fs::path p = a.out / (run == OracleRun::gt_run ? "oracle_gt.gamd" : "oracle_noise.gamd");
            outs.add(p);
            outs.add(sidecar_path(p));
            write_dump(concat_samples(parts), infos, p);
        }
    }
    inv.write_manifest(a.out / "manifest.json", outs);
    outs.commit();
    std::cerr << "synth: " << scenes.size() << " scenes in " << a.out.string() << "\n";
}

struct TrainArgs {
    fs::path scenes;
    std::string seeds;
    fs::path out;
    std::string encoder = "grounded";
    double phrase_mix = 1.0;
    toydiff::DenoiserConfig cfg;
    bool no_coords = false;
    bool quiet = false;
};

void run_train(TrainArgs a, Invocation& inv) {
    using namespace toydiff;
    std::vector<SceneSpec> corpus_scenes;
    if (!a.scenes.empty()) {
        corpus_scenes = load_scenes(a.scenes, inv);
    } else if (!a.seeds.empty()) {
        for (uint64_t s : parse_seeds(a.seeds)) corpus_scenes.push_back(gen_scene(s));
    } else {
        throw ArgumentError("train: give --scenes or --seeds");
    }
    Checkpoint ck;
    ck.encoder = parse_encoder_variant(a.encoder);
    ck.phrase_mix = a.phrase_mix;
    a.cfg.coord_channels = !a.no_coords;
    ck.config = a.cfg;
    inv.options = {{"encoder", a.encoder}, {"phrase_mix", a.phrase_mix}, {"config", ck.config},
                   {"seeds", a.seeds},     {"n_scenes", corpus_scenes.size()}};

    Outputs outs;
    const auto enc = ck.make_encoder_table();
    UNet model(ck.config);
    TrainOptions topt;
    if (!a.quiet)
        topt.on_epoch = [](int e, double l) { std::cerr << "epoch " << e << " loss " << l << "\n"; };
    const auto res = train(model, ck.schedule, prepare_corpus(corpus_scenes, enc), topt);
    ck.params = model.params().data();
    ck.ema = res.ema;
    ck.training = {{"n_scenes", corpus_scenes.size()},
                   {"steps", res.steps},
                   {"epoch_loss", res.epoch_loss},
                   {"initial_eval_loss", res.initial_eval_loss},
                   {"final_eval_loss", res.final_eval_loss}};
    write_checkpoint(outs.add(a.out), ck);
    inv.write_manifest(manifest_for(a.out), outs);
    outs.commit();
    std::cerr << "train: " << res.steps << " steps in " << res.seconds << " s, eval loss " << res.initial_eval_loss
              << " -> " << res.final_eval_loss << "\n";
}

struct SampleArgs {
    fs::path checkpoint;
    fs::path scenes;
    fs::path out;
    fs::path images;
    std::string mode = "gt_cfg";
    int steps = 50;
    double guidance = 3.0;
    uint64_t seed = 0;
    bool no_capture = false;
    bool raw_weights = false;
    int chunk = 20;
};

void write_gray_png(const fs::path& p, const toydiff::Image& img, int scale) {
    RgbImage out(img.side * scale, img.side * scale);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            const auto v = uint8_t(std::lround(std::clamp(img.pixels[size_t(y / scale) * img.side + x / scale], 0.0f, 1.0f) * 255));
            out.at(x, y) = {v, v, v};
        }
    write_png(p, out);
}

void run_sample(const SampleArgs& a, Invocation& inv) {
    using namespace toydiff;
    if (a.no_capture && a.images.empty()) throw ArgumentError("sample: --no-capture needs --images");
    if (!a.no_capture && a.out.empty()) throw ArgumentError("sample: --out is required when capturing");
    if (a.chunk < 1) throw ArgumentError("sample: --chunk must be >= 1");
    inv.input(a.checkpoint);
    const auto ck = read_checkpoint(a.checkpoint);
    const auto scenes = load_scenes(a.scenes, inv);
    if (scenes.empty()) throw ArgumentError("sample: scene file is empty");
    SampleOptions opt;
    opt.mode = parse_sample_mode(a.mode);
    opt.steps = a.steps;
    opt.guidance = a.guidance;
    opt.seed = a.seed;
    opt.capture = !a.no_capture;
    inv.options = {{"mode", a.mode}, {"steps", a.steps},         {"guidance", a.guidance},  {"seed", a.seed},
                   {"capture", opt.capture}, {"raw_weights", a.raw_weights}, {"chunk", a.chunk}};

    Outputs outs;
    auto model = ck.make_model(!a.raw_weights);
    const auto enc = ck.make_encoder_table();
    std::vector<AttentionDump> parts;
    std::vector<Image> images;
    std::vector<SampleInfo> infos;
    for (size_t first = 0; first < scenes.size(); first += size_t(a.chunk)) {
        const size_t last = std::min(scenes.size(), first + size_t(a.chunk));
        std::vector<std::vector<TokenMeta>> caps;
        std::vector<Image> gts;
        for (size_t i = first; i < last; ++i) {
            caps.push_back(scenes[i].caption);
            gts.push_back(render(scenes[i]));
            infos.push_back(scene_sample_info(scenes[i]));
        }
        opt.first_index = first;
        auto res = sample(model, ck.schedule, enc, caps, opt, &gts);
        if (res.dump) parts.push_back(std::move(*res.dump));
        for (auto& im : res.images) images.push_back(std::move(im));
    }
    fs::path manifest = a.out.empty() ? a.images / "manifest.json" : manifest_for(a.out);
    if (!a.images.empty()) {
        outs.add_dir(a.images);
        for (size_t i = 0; i < images.size(); ++i) write_gray_png(outs.add(a.images / (infos[i].id + ".png")), images[i], 4);
    }
    if (!parts.empty()) {
        auto dump = concat_samples(parts);
        dump.attributes()["checkpoint_encoder"] = to_string(ck.encoder);
        outs.add(a.out);
        outs.add(sidecar_path(a.out));
        write_dump(dump, infos, a.out);
    }
    inv.write_manifest(manifest, outs);
    outs.commit();
    std::cerr << "sample: " << scenes.size() << " samples, mode " << a.mode << ", " << a.steps << " steps\n";
}

struct ExtractArgs {
    fs::path dump;
    fs::path out;
    ExtractFlags flags;
    std::string bias = "comb";
    bool no_normalize = false;
};

void run_extract(const ExtractArgs& a, Invocation& inv) {
    const auto loaded = load_dump(a.dump, inv);
    auto spec = a.flags.spec();
    spec.normalize = !a.no_normalize;
    if (a.bias != "comb" && a.bias != "img") throw ArgumentError("extract: --map must be comb or img");
    MapFile f;
    f.stage = "extract";
    f.spec = spec_to_json(spec);
    f.spec["map"] = a.bias;
    inv.options = f.spec;
    for (size_t b = 0; b < loaded.samples.size(); ++b) {
        const auto& s = loaded.samples[b];
        MapRecord r;
        r.id = s.id;
        r.ground_truth = s.ground_truth;
        if (a.bias == "img") {
            r.map = extract_img_bias(loaded.dump, spec, b);
        } else {
            TokenSelection sel;
            r.map = extract_comb(loaded.dump, s.tokens, spec, b, &sel);
            r.token_fallback = sel.fell_back;
        }
        f.records.push_back(std::move(r));
    }
    Outputs outs;
    write_json_file(outs.add(a.out), encode_map_file(f));
    inv.write_manifest(manifest_for(a.out), outs);
    outs.commit();
}

struct MergeArgs {
    fs::path gt_dump, noise_dump, out;
    ExtractFlags flags;
    std::string variant = "mixture";
    bool keep_intermediate = false;
};

void run_merge(const MergeArgs& a, Invocation& inv) {
    const auto gt = load_dump(a.gt_dump, inv);
    const auto noise = load_dump(a.noise_dump, inv);
    if (gt.samples.size() != noise.samples.size())
        throw ValidationError("merge: dumps hold " + std::to_string(gt.samples.size()) + " and " +
                              std::to_string(noise.samples.size()) + " samples");
    for (size_t b = 0; b < gt.samples.size(); ++b)
        if (gt.samples[b].id != noise.samples[b].id || gt.samples[b].tokens != noise.samples[b].tokens)
            throw ValidationError("merge: sample " + std::to_string(b) + " differs between the two dumps");
    const auto spec = a.flags.spec();
    const auto variant = parse_merge_variant(a.variant);
    MapFile f;
    f.stage = "merge";
    f.spec = spec_to_json(spec);
    f.spec["variant"] = a.variant;
    inv.options = f.spec;
    inv.options["keep_intermediate"] = a.keep_intermediate;
    for (size_t b = 0; b < gt.samples.size(); ++b) {
        const auto& s = gt.samples[b];
        auto m = run_bbm(gt.dump, noise.dump, s.tokens, spec, b, variant);
        MapRecord r;
        r.id = s.id;
        r.ground_truth = s.ground_truth;
        r.map = m.p_bbm;
        r.token_fallback = select_tokens(s.tokens, spec.token_mode).fell_back;
        r.extra = {{"s", m.s}, {"variant", a.variant}};
        if (a.keep_intermediate) {
            r.extra["p_comb"] = m.p_comb;
            r.extra["p_img"] = m.p_img;
            r.extra["p_txt"] = m.p_txt;
            r.extra["p_mult"] = m.p_mult;
        }
        f.records.push_back(std::move(r));
    }
    Outputs outs;
    write_json_file(outs.add(a.out), encode_map_file(f));
    inv.write_manifest(manifest_for(a.out), outs);
    outs.commit();
}

struct MaskArgs {
    fs::path maps, out;
};

void run_mask(const MaskArgs& a, Invocation& inv) {
    const auto f = load_maps(a.maps, inv);
    std::vector<MaskRecord> masks;
    for (const auto& r : f.records) masks.push_back({r.id, gmm_mask(r.map)});
    Outputs outs;
    write_json_file(outs.add(a.out), encode_mask_file(masks));
    inv.write_manifest(manifest_for(a.out), outs);
    outs.commit();
}

struct EvalArgs {
    fs::path maps, masks, gt, out;
    std::string iou = "two-class";
    std::string run = "0";
};

void run_eval(const EvalArgs& a, Invocation& inv) {
    const auto f = load_maps(a.maps, inv);
    const auto reading = parse_iou_reading(a.iou);
    inv.options = {{"iou", std::string(to_string(reading))}, {"run", a.run}};
    std::vector<MaskRecord> masks;
    if (!a.masks.empty()) {
        inv.input(a.masks);
        masks = decode_mask_file(read_json_file(a.masks));
    }
    // Optional external ground truth: a dump sidecar or a scene file.
    std::map<std::string, GroundTruthRegion> external;
    if (!a.gt.empty()) {
        inv.input(a.gt);
        const auto doc = read_json_file(a.gt);
        if (doc.value("format", std::string{}) == "attnground-scenes") {
            for (const auto& sc : decode_scene_file(doc)) {
                const auto info = scene_sample_info(sc);
                external[info.id] = *info.ground_truth;
            }
        } else {
            for (const auto& s : decode_sidecar(doc))
                if (s.ground_truth) external[s.id] = *s.ground_truth;
        }
    }
    std::string lines;
    double iou_sum = 0;
    for (const auto& r : f.records) {
        GroundTruthRegion gt;
        if (auto it = external.find(r.id); it != external.end())
            gt = it->second;
        else if (r.ground_truth)
            gt = *r.ground_truth;
        else
            throw ValidationError("eval: no ground truth for sample '" + r.id + "'");
        BinaryMask mask;
        if (masks.empty()) {
            mask = gmm_mask(r.map);
        } else {
            auto it = std::find_if(masks.begin(), masks.end(), [&](const MaskRecord& m) { return m.id == r.id; });
            if (it == masks.end()) throw ValidationError("eval: no mask for sample '" + r.id + "'");
            mask = it->mask;
        }
        auto rec = evaluate(r.map, mask, gt, r.id, a.run);
        rec.token_fallback = r.token_fallback;
        iou_sum += iou(mask, gt, reading);
        lines += json(rec).dump() + "\n";
    }
    Outputs outs;
    detail::write_atomically(outs.add(a.out), lines);
    inv.write_manifest(manifest_for(a.out), outs);
    outs.commit();
    std::cerr << "eval: " << f.records.size() << " records, mean " << to_string(reading) << " IoU "
              << (f.records.empty() ? 0.0 : iou_sum / double(f.records.size())) << "\n";
}

std::vector<MetricsRecord> read_records(const fs::path& p) {
    std::vector<MetricsRecord> out;
    std::istringstream in(detail::read_file(p));
    std::string line;
    size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            out.push_back(json::parse(line).get<MetricsRecord>());
        } catch (const json::exception& e) {
            throw FormatError(p.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

struct ReportArgs {
    std::vector<fs::path> records;
    fs::path out;
    fs::path json_out;
};

void run_report(const ReportArgs& a, Invocation& inv) {
    std::vector<MetricsRecord> all;
    for (const auto& p : a.records) {
        inv.input(p);
        auto r = read_records(p);
        all.insert(all.end(), r.begin(), r.end());
    }
    if (all.empty()) throw DegenerateInputError("report: no records");
    const auto rep = aggregate(all);
    std::ostringstream csv;
    write_report_csv(csv, rep);
    Outputs outs;
    detail::write_atomically(outs.add(a.out), csv.str());
    if (!a.json_out.empty()) write_json_file(outs.add(a.json_out), report_to_json(rep));
    inv.write_manifest(manifest_for(a.out), outs);
    outs.commit();
}

struct RenderArgs {
    fs::path maps, out, base_png, scenes;
    std::string sample;
    int scale = 4;
    double alpha = 0.55;
    bool no_boxes = false;
};

void run_render(const RenderArgs& a, Invocation& inv) {
    const auto f = load_maps(a.maps, inv);
    if (f.records.empty()) throw ArgumentError("render: map file is empty");
    const MapRecord& r = a.sample.empty() ? f.records.front() : f.find(a.sample);
    std::vector<float> base;
    int base_side = 0;
    if (!a.base_png.empty()) {
        inv.input(a.base_png);
        const auto img = decode_png(detail::read_file(a.base_png));
        if (img.width != img.height) throw ArgumentError("render: base image must be square");
        base = to_gray(img);
        base_side = img.width;
    } else if (!a.scenes.empty()) {
        const auto scenes = load_scenes(a.scenes, inv);
        auto it = std::find_if(scenes.begin(), scenes.end(),
                               [&](const SceneSpec& s) { return scene_sample_info(s).id == r.id; });
        if (it == scenes.end()) throw ArgumentError("render: no scene for sample '" + r.id + "'");
        const auto img = toydiff::render(*it, r.map.rows);
        base = img.pixels;
        base_side = img.side;
    }
    OverlayOptions opt;
    opt.scale = a.scale;
    opt.alpha = a.alpha;
    opt.draw_boxes = !a.no_boxes;
    inv.options = {{"sample", r.id}, {"scale", a.scale}, {"alpha", a.alpha}, {"boxes", opt.draw_boxes}};
    const auto img = render_overlay(r.map, base, base_side, r.ground_truth ? &*r.ground_truth : nullptr, opt);
    Outputs outs;
    write_png(outs.add(a.out), img);
    inv.write_manifest(manifest_for(a.out), outs);
    outs.commit();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Attention-map phrase grounding: synthesis, toy diffusion, extraction, BBM and evaluation"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    Invocation inv;
    for (int i = 0; i < argc; ++i) inv.argv.emplace_back(argv[i]);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate scenes and oracle attention dumps");
    s->add_option("--seeds", synth.seeds, "e.g. 0..99 or 1,4,9")->required();
    s->add_option("--out", synth.out, "output directory")->required();
    s->add_option("--noise", synth.noise, "oracle noise sigma")->capture_default_str();
    s->add_option("--bias", synth.bias, "aligned | anti")->capture_default_str();
    s->add_option("--corruption", synth.corruption, "fraction of lexical mass moved to decoys")->capture_default_str();
    s->add_option("--timesteps", synth.timesteps, "oracle timesteps")->capture_default_str();
    s->add_option("--oracle-seed", synth.oracle_seed, "oracle noise seed")->capture_default_str();
    s->add_flag("--scenes-only", synth.scenes_only, "skip dump generation");
    s->callback([&] {
        inv.command = "synth";
        run_synth(synth, inv);
    });

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train the toy denoiser");
    t->add_option("--scenes", tr.scenes, "scene file from synth");
    t->add_option("--seeds", tr.seeds, "generate the corpus from these seeds instead");
    t->add_option("--out", tr.out, "checkpoint path")->required();
    t->add_option("--encoder", tr.encoder, "grounded | degraded")->capture_default_str();
    t->add_option("--phrase-mix", tr.phrase_mix, "encoder phrase mixing weight")->capture_default_str();
    t->add_option("--epochs", tr.cfg.epochs)->capture_default_str();
    t->add_option("--batch", tr.cfg.batch_size)->capture_default_str();
    t->add_option("--lr", tr.cfg.learning_rate)->capture_default_str();
    t->add_option("--cond-dropout", tr.cfg.cond_dropout)->capture_default_str();
    t->add_option("--ema", tr.cfg.ema_decay)->capture_default_str();
    t->add_option("--grad-clip", tr.cfg.grad_clip)->capture_default_str();
    t->add_option("--channels", tr.cfg.channels, "three channel counts")->capture_default_str();
    t->add_option("--seed", tr.cfg.seed)->capture_default_str();
    t->add_flag("--no-coords", tr.no_coords, "drop the coordinate input channels");
    t->add_flag("--quiet", tr.quiet, "no per-epoch log");
    t->callback([&] {
        inv.command = "train";
        run_train(tr, inv);
    });

    SampleArgs sa;
    auto* sp = app.add_subcommand("sample", "Sample from a checkpoint and capture attention");
    sp->add_option("--checkpoint", sa.checkpoint)->required()->check(CLI::ExistingFile);
    sp->add_option("--scenes", sa.scenes, "captions and ground-truth images")->required()->check(CLI::ExistingFile);
    sp->add_option("--out", sa.out, "dump path");
    sp->add_option("--images", sa.images, "directory for sampled images (PNG)");
    sp->add_option("--mode", sa.mode, "text | cfg | gt1_cfg | gt_cfg")->capture_default_str();
    sp->add_option("--steps", sa.steps)->capture_default_str();
    sp->add_option("--guidance", sa.guidance)->capture_default_str();
    sp->add_option("--seed", sa.seed)->capture_default_str();
    sp->add_option("--chunk", sa.chunk, "samples per batch")->capture_default_str();
    sp->add_flag("--no-capture", sa.no_capture, "do not record attention");
    sp->add_flag("!--capture", sa.no_capture, "record attention (default)");
    sp->add_flag("--raw-weights", sa.raw_weights, "use raw instead of EMA weights");
    sp->callback([&] {
        inv.command = "sample";
        run_sample(sa, inv);
    });

    ExtractArgs ex;
    auto* e = app.add_subcommand("extract", "Activation maps from a dump");
    e->add_option("--dump", ex.dump)->required()->check(CLI::ExistingFile);
    e->add_option("--out", ex.out)->required();
    ex.flags.add_to(e);
    e->add_option("--map", ex.bias, "comb | img (start token)")->capture_default_str();
    e->add_flag("--no-normalize", ex.no_normalize);
    e->callback([&] {
        inv.command = "extract";
        run_extract(ex, inv);
    });

    MergeArgs mg;
    auto* m = app.add_subcommand("merge", "Bimodal bias merging of a ground-truth run and a noise run");
    m->add_option("--gt-dump", mg.gt_dump)->required()->check(CLI::ExistingFile);
    m->add_option("--noise-dump", mg.noise_dump)->required()->check(CLI::ExistingFile);
    m->add_option("--out", mg.out)->required();
    m->add_option("--variant", mg.variant, "linear | quadratic | mixture")->capture_default_str();
    m->add_flag("--keep-intermediate", mg.keep_intermediate, "store P_comb, P_img, P_txt and P_mult too");
    mg.flags.add_to(m);
    m->callback([&] {
        inv.command = "merge";
        run_merge(mg, inv);
    });

    MaskArgs mk;
    auto* k = app.add_subcommand("mask", "GMM threshold masks");
    k->add_option("--maps", mk.maps)->required()->check(CLI::ExistingFile);
    k->add_option("--out", mk.out)->required();
    k->callback([&] {
        inv.command = "mask";
        run_mask(mk, inv);
    });

    EvalArgs ev;
    auto* v = app.add_subcommand("eval", "Per-sample grounding metrics");
    v->add_option("--maps", ev.maps)->required()->check(CLI::ExistingFile);
    v->add_option("--masks", ev.masks, "masks from 'mask'; fitted on the fly when absent")->check(CLI::ExistingFile);
    v->add_option("--gt", ev.gt, "sidecar or scene file overriding the maps' ground truth")->check(CLI::ExistingFile);
    v->add_option("--iou", ev.iou, "fg | two-class (summary line)")->capture_default_str();
    v->add_option("--run", ev.run, "run label for seed aggregation")->capture_default_str();
    v->add_option("--out", ev.out, "JSON-lines records")->required();
    v->callback([&] {
        inv.command = "eval";
        run_eval(ev, inv);
    });

    ReportArgs rp;
    auto* r = app.add_subcommand("report", "Per-category table from metric records");
    r->add_option("--records", rp.records)->required()->check(CLI::ExistingFile);
    r->add_option("--out", rp.out, "CSV path")->required();
    r->add_option("--json", rp.json_out, "also write the report as JSON");
    r->callback([&] {
        inv.command = "report";
        run_report(rp, inv);
    });

    RenderArgs rd;
    auto* d = app.add_subcommand("render", "Heatmap overlay PNG");
    d->add_option("--maps", rd.maps)->required()->check(CLI::ExistingFile);
    d->add_option("--out", rd.out)->required();
    d->add_option("--sample", rd.sample, "sample id (default: first)");
    auto* base = d->add_option("--base", rd.base_png, "grayscale base image (PNG)")->check(CLI::ExistingFile);
    d->add_option("--scenes", rd.scenes, "render the base image from this scene file")
        ->check(CLI::ExistingFile)
        ->excludes(base);
    d->add_option("--scale", rd.scale)->capture_default_str();
    d->add_option("--alpha", rd.alpha)->capture_default_str();
    d->add_flag("--no-boxes", rd.no_boxes);
    d->callback([&] {
        inv.command = "render";
        run_render(rd, inv);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err);
    } catch (const attnground::Error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
    return 0;
}
