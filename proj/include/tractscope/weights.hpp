#pragma once

// First-order contiguity and sparse spatial weights.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "tractscope/error.hpp"
#include "tractscope/ingest.hpp"

namespace tractscope {

/// Symmetric neighbor lists without self-loops; each list sorted ascending.
struct AdjacencyList {
    std::size_t n = 0;
    std::vector<std::vector<std::size_t>> neighbors;

    [[nodiscard]] std::size_t degree(std::size_t i) const { return neighbors[i].size(); }

    [[nodiscard]] std::size_t edge_count() const {
        std::size_t total = 0;
        for (const auto& nb : neighbors) total += nb.size();
        return total / 2;
    }

    [[nodiscard]] bool contains(std::size_t i, std::size_t j) const {
        return std::binary_search(neighbors[i].begin(), neighbors[i].end(), j);
    }

    friend bool operator==(const AdjacencyList&, const AdjacencyList&) = default;
};

/// Builds an adjacency list from an undirected edge set; duplicates and
/// self-pairs are discarded.
inline AdjacencyList make_adjacency(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
    AdjacencyList adj{n, std::vector<std::vector<std::size_t>>(n)};
    for (auto [i, j] : edges) {
        if (i >= n || j >= n) throw InputError("adjacency: index out of range");
        if (i == j) continue;
        adj.neighbors[i].push_back(j);
        adj.neighbors[j].push_back(i);
    }
    for (auto& nb : adj.neighbors) {
        std::sort(nb.begin(), nb.end());
        nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    }
    return adj;
}

/// 1e-9 of the bounding-box diagonal of all vertices.
inline double default_snap_tolerance(const std::vector<AreaUnit>& units) {
    double xmin = std::numeric_limits<double>::infinity(), ymin = xmin;
    double xmax = -xmin, ymax = -xmin;
    for (const auto& u : units) {
        for (const auto& poly : u.polygons) {
            for (const auto& ring : poly) {
                for (const auto& p : ring) {
                    xmin = std::min(xmin, p.x);
                    xmax = std::max(xmax, p.x);
                    ymin = std::min(ymin, p.y);
                    ymax = std::max(ymax, p.y);
                }
            }
        }
    }
    const double diag = std::hypot(xmax - xmin, ymax - ymin);
    return (std::isfinite(diag) && diag > 0.0) ? 1e-9 * diag : 1e-9;
}

namespace detail {

struct GridKey {
    std::int64_t x;
    std::int64_t y;
    friend bool operator==(const GridKey&, const GridKey&) = default;
};

struct GridKeyHash {
    std::size_t operator()(const GridKey& k) const noexcept {
        std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ULL;
        h ^= static_cast<std::uint64_t>(k.y) + 0x7F4A7C159E3779B9ULL + (h << 6) + (h >> 2);
        return static_cast<std::size_t>(h);
    }
};

inline GridKey cell_of(const Point& p, double pitch) {
    return {static_cast<std::int64_t>(std::floor(p.x / pitch)), static_cast<std::int64_t>(std::floor(p.y / pitch))};
}

// Vertices bucketed by cells of side `pitch`. Two vertices coincide when
// they lie within `pitch` of each other, so a lookup scans the 3 x 3 block
// of cells around the query point.
class VertexGrid {
public:
    VertexGrid(const std::vector<AreaUnit>& units, double pitch) : pitch_(pitch) {
        for (std::size_t i = 0; i < units.size(); ++i) {
            for (const auto& poly : units[i].polygons) {
                for (const auto& ring : poly) {
                    for (const auto& p : ring) cells_[cell_of(p, pitch)].push_back({i, p});
                }
            }
        }
    }

    /// Sorted distinct units having a vertex within the pitch of `p`.
    [[nodiscard]] std::vector<std::size_t> units_near(const Point& p) const {
        std::vector<std::size_t> out;
        const GridKey c = cell_of(p, pitch_);
        for (std::int64_t dx = -1; dx <= 1; ++dx) {
            for (std::int64_t dy = -1; dy <= 1; ++dy) {
                auto it = cells_.find({c.x + dx, c.y + dy});
                if (it == cells_.end()) continue;
                for (const auto& [unit, q] : it->second) {
                    if (std::hypot(q.x - p.x, q.y - p.y) <= pitch_) out.push_back(unit);
                }
            }
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    [[nodiscard]] bool coincide(const Point& a, const Point& b) const { return std::hypot(a.x - b.x, a.y - b.y) <= pitch_; }

private:
    double pitch_;
    std::unordered_map<GridKey, std::vector<std::pair<std::size_t, Point>>, GridKeyHash> cells_;
};

inline void check_units(const std::vector<AreaUnit>& units, double snap_tolerance) {
    if (units.size() < 2) throw InputError("contiguity: at least 2 units required");
    if (!(snap_tolerance > 0.0) || !std::isfinite(snap_tolerance)) {
        throw InputError("contiguity: snap tolerance must be positive");
    }
}

}  // namespace detail

/// Queen contiguity: units sharing at least one boundary vertex, with
/// vertices closer than `snap_tolerance` treated as the same point.
inline AdjacencyList queen_contiguity(const std::vector<AreaUnit>& units, double snap_tolerance) {
    detail::check_units(units, snap_tolerance);
    const detail::VertexGrid grid(units, snap_tolerance);
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t i = 0; i < units.size(); ++i) {
        for (const auto& poly : units[i].polygons) {
            for (const auto& ring : poly) {
                for (const auto& p : ring) {
                    for (auto j : grid.units_near(p)) {
                        if (j != i) edges.emplace_back(i, j);
                    }
                }
            }
        }
    }
    return make_adjacency(units.size(), edges);
}

/// Rook contiguity: two consecutive distinct vertices of one unit's
/// boundary are both shared with the other unit.
inline AdjacencyList rook_contiguity(const std::vector<AreaUnit>& units, double snap_tolerance) {
    detail::check_units(units, snap_tolerance);
    const detail::VertexGrid grid(units, snap_tolerance);
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    std::vector<std::size_t> common;
    for (std::size_t i = 0; i < units.size(); ++i) {
        for (const auto& poly : units[i].polygons) {
            for (const auto& ring : poly) {
                for (std::size_t k = 0; k + 1 < ring.size(); ++k) {
                    if (grid.coincide(ring[k], ring[k + 1])) continue;
                    const auto oa = grid.units_near(ring[k]);
                    const auto ob = grid.units_near(ring[k + 1]);
                    common.clear();
                    std::set_intersection(oa.begin(), oa.end(), ob.begin(), ob.end(), std::back_inserter(common));
                    for (auto j : common) {
                        if (j != i) edges.emplace_back(i, j);
                    }
                }
            }
        }
    }
    return make_adjacency(units.size(), edges);
}

/// Indices of units with no neighbors.
inline std::vector<std::size_t> detect_islands(const AdjacencyList& adj) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < adj.n; ++i) {
        if (adj.neighbors[i].empty()) out.push_back(i);
    }
    return out;
}

enum class WeightMode { binary, row_standardized };

inline std::string_view to_string(WeightMode m) {
    return m == WeightMode::binary ? "binary" : "row-standardized";
}

inline WeightMode parse_weight_mode(std::string_view s) {
    if (s == "binary") return WeightMode::binary;
    if (s == "row-standardized") return WeightMode::row_standardized;
    throw InputError("weights: unknown mode '" + std::string(s) + "'");
}

struct WeightEntry {
    std::size_t index;
    double weight;
    friend bool operator==(const WeightEntry&, const WeightEntry&) = default;
};

/// Sparse n x n weights. Rows hold entries sorted by column; the diagonal
/// entry is present only when include_self is set.
struct SpatialWeights {
    AdjacencyList adjacency;
    WeightMode mode = WeightMode::binary;
    bool include_self = false;
    std::vector<std::vector<WeightEntry>> rows;
    std::vector<std::string> warnings;

    [[nodiscard]] std::size_t size() const { return adjacency.n; }

    [[nodiscard]] std::size_t entry_count() const {
        std::size_t total = 0;
        for (const auto& r : rows) total += r.size();
        return total;
    }

    [[nodiscard]] Eigen::SparseMatrix<double, Eigen::RowMajor> to_sparse() const {
        std::vector<Eigen::Triplet<double>> trips;
        trips.reserve(entry_count());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (const auto& e : rows[i]) {
                trips.emplace_back(static_cast<int>(i), static_cast<int>(e.index), e.weight);
            }
        }
        Eigen::SparseMatrix<double, Eigen::RowMajor> m(static_cast<Eigen::Index>(size()),
                                                       static_cast<Eigen::Index>(size()));
        m.setFromTriplets(trips.begin(), trips.end());
        return m;
    }

    [[nodiscard]] Eigen::MatrixXd to_dense() const {
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(size()), static_cast<Eigen::Index>(size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (const auto& e : rows[i]) {
                m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(e.index)) = e.weight;
            }
        }
        return m;
    }
};

inline SpatialWeights to_weights(const AdjacencyList& adj, WeightMode mode, bool include_self = false) {
    SpatialWeights w;
    w.adjacency = adj;
    w.mode = mode;
    w.include_self = include_self;
    w.rows.resize(adj.n);
    for (std::size_t i = 0; i < adj.n; ++i) {
        auto& row = w.rows[i];
        bool self_done = !include_self;
        for (auto j : adj.neighbors[i]) {
            if (!self_done && i < j) {
                row.push_back({i, 1.0});
                self_done = true;
            }
            row.push_back({j, 1.0});
        }
        if (!self_done) row.push_back({i, 1.0});
        if (mode == WeightMode::row_standardized) {
            if (row.empty()) {
                w.warnings.push_back("unit " + std::to_string(i) + " has no neighbors; its weights row is all zero");
                continue;
            }
            const double share = 1.0 / static_cast<double>(row.size());
            for (auto& e : row) e.weight = share;
        }
    }
    return w;
}

/// Wx by sparse row sums, each row accumulated in column order.
inline Eigen::VectorXd lag(const SpatialWeights& w, const Eigen::Ref<const Eigen::VectorXd>& x) {
    if (static_cast<std::size_t>(x.size()) != w.size()) {
        throw InputError("lag: vector length " + std::to_string(x.size()) + " does not match weights size " +
                         std::to_string(w.size()));
    }
    Eigen::VectorXd out(x.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        double acc = 0.0;
        for (const auto& e : w.rows[i]) acc += e.weight * x(static_cast<Eigen::Index>(e.index));
        out(static_cast<Eigen::Index>(i)) = acc;
    }
    return out;
}

/// Column-wise lag of a matrix.
inline Eigen::MatrixXd lag_columns(const SpatialWeights& w, const Eigen::MatrixXd& x) {
    Eigen::MatrixXd out(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) out.col(c) = lag(w, Eigen::VectorXd(x.col(c)));
    return out;
}

namespace detail {

inline std::string shortest(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

}  // namespace detail

/// Text form: "n mode" header, then one "i j w" line per stored entry.
inline std::string write_weights(const SpatialWeights& w) {
    std::string out = std::to_string(w.size()) + " " + std::string(to_string(w.mode)) + "\n";
    for (std::size_t i = 0; i < w.rows.size(); ++i) {
        for (const auto& e : w.rows[i]) {
            out += std::to_string(i) + " " + std::to_string(e.index) + " " + detail::shortest(e.weight) + "\n";
        }
    }
    return out;
}

inline SpatialWeights read_weights(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line)) throw InputError("weights file: missing header");
    std::istringstream header(line);
    std::size_t n = 0;
    std::string mode;
    if (!(header >> n >> mode)) throw InputError("weights file: malformed header '" + line + "'");

    SpatialWeights w;
    w.mode = parse_weight_mode(mode);
    w.rows.resize(n);
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::size_t i = 0, j = 0;
        std::string wtok;
        if (!(ls >> i >> j >> wtok) || i >= n || j >= n) {
            throw InputError("weights file: malformed entry on line " + std::to_string(lineno));
        }
        double value = 0.0;
        auto [ptr, ec] = std::from_chars(wtok.data(), wtok.data() + wtok.size(), value);
        if (ec != std::errc() || ptr != wtok.data() + wtok.size()) {
            throw InputError("weights file: bad weight on line " + std::to_string(lineno));
        }
        if (i == j) {
            w.include_self = true;
        } else {
            edges.emplace_back(i, j);
        }
        w.rows[i].push_back({j, value});
    }
    for (auto& r : w.rows) {
        std::sort(r.begin(), r.end(), [](const WeightEntry& a, const WeightEntry& b) { return a.index < b.index; });
    }
    w.adjacency = make_adjacency(n, edges);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t expected = w.adjacency.degree(i) + (w.include_self ? 1 : 0);
        if (w.rows[i].size() != expected) {
            throw InputError("weights file: row " + std::to_string(i) + " is not symmetric with its neighbors");
        }
    }
    return w;
}

}  // namespace tractscope
