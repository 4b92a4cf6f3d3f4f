#pragma once

// JSON containers passed between pipeline stages: activation maps (one per sample, with
// the ground truth carried along) and binary masks.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnground/activation_map.hpp"
#include "attnground/attnstore.hpp"
#include "attnground/masking.hpp"

namespace attnground {

struct MapRecord {
    std::string id;
    ActivationMap map;
    std::optional<GroundTruthRegion> ground_truth;
    bool token_fallback = false;
    nlohmann::json extra = nlohmann::json::object();  // e.g. BBM confidence and intermediate maps
};

struct MapFile {
    std::string stage = "extract";                   // extract | merge
    nlohmann::json spec = nlohmann::json::object();  // flags that produced the maps
    std::vector<MapRecord> records;

    const MapRecord& find(const std::string& id) const {
        for (const auto& r : records)
            if (r.id == id) return r;
        throw ArgumentError("no map for sample '" + id + "'");
    }
};

struct MaskRecord {
    std::string id;
    BinaryMask mask;
};

inline nlohmann::json mask_to_json(const BinaryMask& m) {
    std::string bits(m.values.size(), '0');
    for (size_t i = 0; i < bits.size(); ++i)
        if (m.values[i]) bits[i] = '1';
    return {{"rows", m.rows}, {"cols", m.cols}, {"bits", bits}, {"threshold", m.threshold}, {"degenerate", m.degenerate}};
}

inline BinaryMask mask_from_json(const nlohmann::json& j) {
    BinaryMask m;
    m.rows = j.at("rows").get<int>();
    m.cols = j.at("cols").get<int>();
    const auto bits = j.at("bits").get<std::string>();
    if (bits.size() != size_t(m.rows) * m.cols) throw FormatError("mask: bit string does not match rows x cols");
    m.values.resize(bits.size());
    for (size_t i = 0; i < bits.size(); ++i) {
        if (bits[i] != '0' && bits[i] != '1') throw FormatError("mask: bits must be 0 or 1");
        m.values[i] = bits[i] == '1';
    }
    m.threshold = j.value("threshold", 0.0);
    m.degenerate = j.value("degenerate", false);
    return m;
}

inline nlohmann::json encode_map_file(const MapFile& f) {
    nlohmann::json doc = {{"format", "attnground-maps"}, {"version", 1}, {"stage", f.stage}, {"spec", f.spec}};
    auto& arr = doc["samples"] = nlohmann::json::array();
    for (const auto& r : f.records) {
        nlohmann::json js = {{"id", r.id}, {"map", r.map}, {"token_fallback", r.token_fallback}};
        js["ground_truth"] = r.ground_truth ? nlohmann::json(*r.ground_truth) : nlohmann::json(nullptr);
        if (!r.extra.empty()) js["extra"] = r.extra;
        arr.push_back(std::move(js));
    }
    return doc;
}

inline MapFile decode_map_file(const nlohmann::json& doc) {
    if (doc.value("format", std::string{}) != "attnground-maps") throw FormatError("maps: unknown format tag");
    MapFile f;
    try {
        f.stage = doc.value("stage", std::string("extract"));
        f.spec = doc.value("spec", nlohmann::json::object());
        for (const auto& js : doc.at("samples")) {
            MapRecord r;
            r.id = js.at("id").get<std::string>();
            r.map = js.at("map").get<ActivationMap>();
            if (r.map.values.size() != size_t(r.map.rows) * r.map.cols)
                throw FormatError("maps: sample '" + r.id + "' values do not match rows x cols");
            if (js.contains("ground_truth") && !js["ground_truth"].is_null())
                r.ground_truth = js["ground_truth"].get<GroundTruthRegion>();
            r.token_fallback = js.value("token_fallback", false);
            r.extra = js.value("extra", nlohmann::json::object());
            f.records.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("maps: ") + e.what());
    }
    return f;
}

inline nlohmann::json encode_mask_file(const std::vector<MaskRecord>& masks) {
    nlohmann::json doc = {{"format", "attnground-masks"}, {"version", 1}};
    auto& arr = doc["samples"] = nlohmann::json::array();
    for (const auto& m : masks) arr.push_back({{"id", m.id}, {"mask", mask_to_json(m.mask)}});
    return doc;
}

inline std::vector<MaskRecord> decode_mask_file(const nlohmann::json& doc) {
    if (doc.value("format", std::string{}) != "attnground-masks") throw FormatError("masks: unknown format tag");
    std::vector<MaskRecord> out;
    try {
        for (const auto& js : doc.at("samples"))
            out.push_back({js.at("id").get<std::string>(), mask_from_json(js.at("mask"))});
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("masks: ") + e.what());
    }
    return out;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    const std::string text = detail::read_file(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc) {
    detail::write_atomically(path, doc.dump(1) + "\n");
}

}  // namespace attnground
