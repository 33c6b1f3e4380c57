#pragma once

// Polygon and attribute ingestion: feature-collection geometry, comma-delimited
// attribute tables, and the id join between them.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tractscope/error.hpp"

namespace tractscope {

using Json = nlohmann::ordered_json;

struct Point {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Point&, const Point&) = default;
};

/// Closed ring: first point repeated as last.
using Ring = std::vector<Point>;
/// rings[0] is the outer boundary, the rest are holes.
using Polygon = std::vector<Ring>;

struct AreaUnit {
    std::string id;
    std::vector<Polygon> polygons;
    Json properties = Json::object();  ///< scalar properties, source order
};

/// Shoelace signed area; positive for counterclockwise rings.
inline double signed_area(const Ring& ring) {
    double acc = 0.0;
    for (std::size_t k = 0; k + 1 < ring.size(); ++k) {
        acc += ring[k].x * ring[k + 1].y - ring[k + 1].x * ring[k].y;
    }
    return 0.5 * acc;
}

namespace detail {

inline std::string id_to_string(const Json& value) {
    if (value.is_string()) return value.get<std::string>();
    if (value.is_number_integer() || value.is_number_unsigned()) return value.dump();
    if (value.is_number_float()) {
        const double d = value.get<double>();
        if (std::isfinite(d) && d == std::floor(d) && std::fabs(d) < 9.0e15) {
            return std::to_string(static_cast<long long>(d));
        }
        return value.dump();
    }
    return {};
}

inline Ring parse_ring(const Json& coords, std::size_t feature) {
    if (!coords.is_array()) {
        throw InputError("feature " + std::to_string(feature) + ": ring is not an array");
    }
    Ring ring;
    ring.reserve(coords.size());
    for (const auto& pos : coords) {
        if (!pos.is_array() || pos.size() < 2 || !pos[0].is_number() || !pos[1].is_number()) {
            throw InputError("feature " + std::to_string(feature) + ": invalid position");
        }
        ring.push_back({pos[0].get<double>(), pos[1].get<double>()});
    }
    if (ring.size() < 4) {
        throw InputError("feature " + std::to_string(feature) + ": ring has fewer than 4 points");
    }
    if (!(ring.front() == ring.back())) {
        throw InputError("feature " + std::to_string(feature) + ": ring is not closed");
    }
    return ring;
}

// Outer rings counterclockwise, holes clockwise.
inline Polygon parse_polygon(const Json& rings, std::size_t feature) {
    if (!rings.is_array() || rings.empty()) {
        throw InputError("feature " + std::to_string(feature) + ": polygon has no outer ring");
    }
    Polygon poly;
    poly.reserve(rings.size());
    for (std::size_t r = 0; r < rings.size(); ++r) {
        Ring ring = parse_ring(rings[r], feature);
        const double area = signed_area(ring);
        if ((r == 0 && area < 0.0) || (r > 0 && area > 0.0)) {
            std::reverse(ring.begin(), ring.end());
        }
        poly.push_back(std::move(ring));
    }
    return poly;
}

inline Json ring_to_json(const Ring& ring) {
    Json out = Json::array();
    for (const auto& p : ring) out.push_back(Json::array({p.x, p.y}));
    return out;
}

inline std::string trim(std::string_view s) {
    auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

// RFC 4180 style: quoted fields may contain commas, doubled quotes, newlines.
inline std::vector<std::vector<std::string>> split_csv(std::string_view text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    bool row_has_content = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        if (c == '"') {
            quoted = true;
            row_has_content = true;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
            row_has_content = true;
        } else if (c == '\n') {
            if (row_has_content || !field.empty()) {
                row.push_back(std::move(field));
                rows.push_back(std::move(row));
            }
            row.clear();
            field.clear();
            row_has_content = false;
        } else if (c != '\r') {
            field.push_back(c);
            row_has_content = true;
        }
    }
    if (quoted) throw InputError("attribute table: unterminated quoted field");
    if (row_has_content || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::optional<double> parse_number(std::string_view token) {
    const std::string t = trim(token);
    if (t.empty()) return std::nullopt;
    const char* begin = t.data();
    if (*begin == '+') ++begin;
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(begin, t.data() + t.size(), value);
    if (ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(value)) {
        return std::nullopt;
    }
    return value;
}

}  // namespace detail

/// Parses an RFC 7946 FeatureCollection of Polygon / MultiPolygon features.
/// Each feature must carry `id_property` (string or integral number).
inline std::vector<AreaUnit> parse_geometry(std::string_view text, const std::string& id_property) {
    Json doc;
    try {
        doc = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw InputError(std::string("geometry: malformed document: ") + e.what());
    }
    if (!doc.is_object() || doc.value("type", "") != "FeatureCollection" || !doc.contains("features") ||
        !doc["features"].is_array()) {
        throw InputError("geometry: expected a FeatureCollection with a features array");
    }
    std::vector<AreaUnit> units;
    std::unordered_set<std::string> seen;
    const auto& features = doc["features"];
    units.reserve(features.size());
    for (std::size_t f = 0; f < features.size(); ++f) {
        const auto& feat = features[f];
        const std::string where = "feature " + std::to_string(f);
        if (!feat.is_object() || !feat.contains("geometry") || !feat["geometry"].is_object()) {
            throw InputError(where + ": missing geometry");
        }
        AreaUnit unit;
        if (feat.contains("properties") && feat["properties"].is_object()) {
            for (const auto& [key, val] : feat["properties"].items()) {
                if (val.is_primitive()) unit.properties[key] = val;
            }
        }
        if (!unit.properties.contains(id_property)) {
            throw InputError(where + ": missing id property '" + id_property + "'");
        }
        unit.id = detail::id_to_string(unit.properties[id_property]);
        if (unit.id.empty()) {
            throw InputError(where + ": id property '" + id_property + "' is empty or not a scalar");
        }
        if (!seen.insert(unit.id).second) {
            throw InputError(where + ": duplicate id '" + unit.id + "'");
        }
        const auto& geom = feat["geometry"];
        const std::string type = geom.value("type", "");
        if (!geom.contains("coordinates")) throw InputError(where + ": geometry has no coordinates");
        const auto& coords = geom["coordinates"];
        if (type == "Polygon") {
            unit.polygons.push_back(detail::parse_polygon(coords, f));
        } else if (type == "MultiPolygon") {
            if (!coords.is_array() || coords.empty()) throw InputError(where + ": empty MultiPolygon");
            for (const auto& poly : coords) unit.polygons.push_back(detail::parse_polygon(poly, f));
        } else {
            throw InputError(where + ": non-areal geometry type '" + type + "'");
        }
        units.push_back(std::move(unit));
    }
    return units;
}

/// Builds a FeatureCollection from units. `extra`, when given, holds one
/// object per unit whose members are appended to that unit's properties.
inline Json to_feature_collection(const std::vector<AreaUnit>& units, const std::vector<Json>* extra = nullptr) {
    Json features = Json::array();
    for (std::size_t i = 0; i < units.size(); ++i) {
        const auto& u = units[i];
        Json props = u.properties;
        if (extra != nullptr && i < extra->size()) {
            for (const auto& [key, val] : (*extra)[i].items()) props[key] = val;
        }
        Json geometry;
        if (u.polygons.size() == 1) {
            Json rings = Json::array();
            for (const auto& r : u.polygons[0]) rings.push_back(detail::ring_to_json(r));
            geometry = {{"type", "Polygon"}, {"coordinates", rings}};
        } else {
            Json polys = Json::array();
            for (const auto& p : u.polygons) {
                Json rings = Json::array();
                for (const auto& r : p) rings.push_back(detail::ring_to_json(r));
                polys.push_back(rings);
            }
            geometry = {{"type", "MultiPolygon"}, {"coordinates", polys}};
        }
        features.push_back({{"type", "Feature"}, {"properties", props}, {"geometry", geometry}});
    }
    return Json{{"type", "FeatureCollection"}, {"features", features}};
}

inline std::string serialize_geometry(const std::vector<AreaUnit>& units) {
    return to_feature_collection(units).dump();
}

/// Numeric attribute table. Missing cells are stored as NaN.
struct AttributeTable {
    std::vector<std::string> ids;
    std::vector<std::string> columns;
    Eigen::MatrixXd values;  ///< ids.size() x columns.size()

    [[nodiscard]] std::size_t rows() const { return ids.size(); }

    [[nodiscard]] std::optional<std::size_t> column_index(std::string_view name) const {
        for (std::size_t j = 0; j < columns.size(); ++j) {
            if (columns[j] == name) return j;
        }
        return std::nullopt;
    }

    [[nodiscard]] Eigen::VectorXd column(std::string_view name) const {
        auto j = column_index(name);
        if (!j) throw InputError("attribute table: unknown column '" + std::string(name) + "'");
        return values.col(static_cast<Eigen::Index>(*j));
    }

    [[nodiscard]] bool is_missing(std::size_t row, std::size_t col) const {
        return std::isnan(values(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col)));
    }

    [[nodiscard]] std::vector<std::pair<std::size_t, std::size_t>> missing_cells() const {
        std::vector<std::pair<std::size_t, std::size_t>> out;
        for (std::size_t i = 0; i < rows(); ++i) {
            for (std::size_t j = 0; j < columns.size(); ++j) {
                if (is_missing(i, j)) out.emplace_back(i, j);
            }
        }
        return out;
    }
};

/// Parses a header-first comma-delimited table. Every column except
/// `id_column` is numeric; empty and non-numeric cells become missing.
inline AttributeTable parse_attributes(std::string_view text, const std::string& id_column) {
    if (text.size() >= 3 && static_cast<unsigned char>(text[0]) == 0xEF &&
        static_cast<unsigned char>(text[1]) == 0xBB && static_cast<unsigned char>(text[2]) == 0xBF) {
        text.remove_prefix(3);
    }
    auto rows = detail::split_csv(text);
    if (rows.empty()) throw InputError("attribute table: no header row");
    std::vector<std::string> header;
    for (const auto& h : rows[0]) header.push_back(detail::trim(h));
    std::optional<std::size_t> id_pos;
    for (std::size_t j = 0; j < header.size(); ++j) {
        if (header[j] == id_column) id_pos = j;
    }
    if (!id_pos) throw InputError("attribute table: missing id column '" + id_column + "'");

    AttributeTable table;
    for (std::size_t j = 0; j < header.size(); ++j) {
        if (j != *id_pos) table.columns.push_back(header[j]);
    }
    const std::size_t n = rows.size() - 1;
    table.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(table.columns.size()));
    std::unordered_set<std::string> seen;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() != header.size()) {
            throw InputError("attribute table: row " + std::to_string(r) + " has " + std::to_string(row.size()) +
                             " fields, header has " + std::to_string(header.size()));
        }
        std::string id = detail::trim(row[*id_pos]);
        if (!seen.insert(id).second) throw InputError("attribute table: duplicate id '" + id + "'");
        table.ids.push_back(std::move(id));
        Eigen::Index c = 0;
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (j == *id_pos) continue;
            table.values(static_cast<Eigen::Index>(r - 1), c++) =
                detail::parse_number(row[j]).value_or(std::numeric_limits<double>::quiet_NaN());
        }
    }
    return table;
}

enum class MergePolicy { drop_with_report, fail_on_unmatched };

struct DroppedUnit {
    std::string id;
    std::string reason;  ///< "geometry-only", "attributes-only", or "missing:<column>"
};

struct MergedDataset {
    std::vector<AreaUnit> units;
    AttributeTable table;  ///< rows aligned with units
    std::vector<DroppedUnit> dropped;

    [[nodiscard]] std::size_t size() const { return units.size(); }
};

/// Inner join on id, preserving geometry order.
inline MergedDataset merge(const std::vector<AreaUnit>& units, const AttributeTable& table,
                           MergePolicy policy = MergePolicy::drop_with_report) {
    if (units.empty() || table.rows() == 0) throw InputError("merge: both inputs must be nonempty");
    std::unordered_map<std::string, std::size_t> row_of;
    for (std::size_t i = 0; i < table.ids.size(); ++i) row_of.emplace(table.ids[i], i);

    MergedDataset out;
    out.table.columns = table.columns;
    std::vector<std::size_t> rows;
    std::unordered_set<std::string> geometry_ids;
    for (const auto& u : units) {
        geometry_ids.insert(u.id);
        auto it = row_of.find(u.id);
        if (it == row_of.end()) {
            out.dropped.push_back({u.id, "geometry-only"});
        } else {
            out.units.push_back(u);
            rows.push_back(it->second);
        }
    }
    for (const auto& id : table.ids) {
        if (!geometry_ids.contains(id)) out.dropped.push_back({id, "attributes-only"});
    }
    if (out.units.empty()) throw InputError("merge: geometry and attribute ids do not intersect");
    if (policy == MergePolicy::fail_on_unmatched && !out.dropped.empty()) {
        std::string msg = "merge: " + std::to_string(out.dropped.size()) + " unmatched id(s):";
        for (const auto& d : out.dropped) msg += " " + d.id;
        throw InputError(msg);
    }
    out.table.values.resize(static_cast<Eigen::Index>(rows.size()), table.values.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.table.ids.push_back(table.ids[rows[i]]);
        out.table.values.row(static_cast<Eigen::Index>(i)) = table.values.row(static_cast<Eigen::Index>(rows[i]));
    }
    return out;
}

/// Listwise deletion: drops units with a missing value in any of `columns`,
/// logging the first offending column per unit.
inline MergedDataset drop_incomplete(const MergedDataset& data, const std::vector<std::string>& columns) {
    std::vector<std::size_t> cols;
    for (const auto& c : columns) {
        auto j = data.table.column_index(c);
        if (!j) throw InputError("attribute table: unknown column '" + c + "'");
        cols.push_back(*j);
    }
    MergedDataset out;
    out.dropped = data.dropped;
    out.table.columns = data.table.columns;
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::optional<std::size_t> bad;
        for (auto j : cols) {
            if (data.table.is_missing(i, j)) {
                bad = j;
                break;
            }
        }
        if (bad) {
            out.dropped.push_back({data.units[i].id, "missing:" + data.table.columns[*bad]});
        } else {
            keep.push_back(i);
        }
    }
    out.table.values.resize(static_cast<Eigen::Index>(keep.size()), data.table.values.cols());
    for (std::size_t k = 0; k < keep.size(); ++k) {
        out.units.push_back(data.units[keep[k]]);
        out.table.ids.push_back(data.table.ids[keep[k]]);
        out.table.values.row(static_cast<Eigen::Index>(k)) = data.table.values.row(static_cast<Eigen::Index>(keep[k]));
    }
    return out;
}

}  // namespace tractscope
