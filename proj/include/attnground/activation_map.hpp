#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnground/errors.hpp"

namespace attnground {

enum class Provenance { comb, img, txt, mult, bbm };

inline std::string_view to_string(Provenance p) {
    switch (p) {
        case Provenance::comb: return "comb";
        case Provenance::img: return "img";
        case Provenance::txt: return "txt";
        case Provenance::mult: return "mult";
        case Provenance::bbm: return "bbm";
    }
    return "?";
}

inline Provenance parse_provenance(std::string_view s) {
    for (auto p : {Provenance::comb, Provenance::img, Provenance::txt, Provenance::mult, Provenance::bbm})
        if (to_string(p) == s) return p;
    throw FormatError("unknown provenance tag '" + std::string(s) + "'");
}

// Row-major 2D score map. Extraction always produces square maps.
struct ActivationMap {
    int rows = 0;
    int cols = 0;
    std::vector<double> values;
    Provenance provenance = Provenance::comb;

    ActivationMap() = default;
    ActivationMap(int r, int c, double fill = 0.0, Provenance p = Provenance::comb)
        : rows(r), cols(c), values(size_t(r) * c, fill), provenance(p) {}

    static ActivationMap square(int side, double fill = 0.0, Provenance p = Provenance::comb) {
        return {side, side, fill, p};
    }

    size_t size() const { return values.size(); }
    bool is_square() const { return rows == cols; }
    bool same_shape(const ActivationMap& o) const { return rows == o.rows && cols == o.cols; }

    double& operator()(int r, int c) { return values[size_t(r) * cols + c]; }
    double operator()(int r, int c) const { return values[size_t(r) * cols + c]; }

    double min() const { return *std::min_element(values.begin(), values.end()); }
    double max() const { return *std::max_element(values.begin(), values.end()); }

    bool operator==(const ActivationMap&) const = default;
};

inline bool is_constant(const ActivationMap& m) { return m.values.empty() || m.min() == m.max(); }

// Min-max rescale to [0, 1]. Constant maps carry no localization signal and become all-zero.
inline void normalize_in_place(ActivationMap& m) {
    if (m.values.empty()) return;
    const double lo = m.min();
    const double hi = m.max();
    if (!(hi > lo)) {
        std::fill(m.values.begin(), m.values.end(), 0.0);
        return;
    }
    const double scale = 1.0 / (hi - lo);
    for (double& v : m.values) v = (v - lo) * scale;
}

inline ActivationMap normalized(ActivationMap m) {
    normalize_in_place(m);
    return m;
}

inline void require_finite_nonnegative(const ActivationMap& m, const char* what) {
    for (double v : m.values)
        if (!std::isfinite(v) || v < 0.0)
            throw ValidationError(std::string(what) + ": map values must be finite and non-negative");
}

inline void to_json(nlohmann::json& j, const ActivationMap& m) {
    j = {{"rows", m.rows}, {"cols", m.cols}, {"provenance", to_string(m.provenance)}, {"values", m.values}};
}

inline void from_json(const nlohmann::json& j, ActivationMap& m) {
    m.rows = j.at("rows").get<int>();
    m.cols = j.at("cols").get<int>();
    m.provenance = parse_provenance(j.value("provenance", std::string("comb")));
    m.values = j.at("values").get<std::vector<double>>();
    if (m.rows < 1 || m.cols < 1 || m.values.size() != size_t(m.rows) * m.cols)
        throw FormatError("map: value count does not match rows x cols");
}

}  // namespace attnground
