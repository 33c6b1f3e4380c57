#pragma once

// Ward hierarchical agglomerative clustering, flat cuts and group profiles.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "tractscope/error.hpp"

namespace tractscope {

/// One agglomeration step. Leaves are 0..n-1; the k-th merge creates node n+k.
struct Merge {
    std::size_t left;   ///< smaller node id
    std::size_t right;  ///< larger node id
    double height;      ///< sqrt of the Lance-Williams Ward distance (Ward-D2)
    std::size_t size;
};

struct Dendrogram {
    std::size_t leaves = 0;
    std::vector<Merge> merges;
};

/// Ward linkage on squared Euclidean distances via the Lance-Williams
/// recurrence. Exact ties pick the lexicographically smallest (left, right)
/// node-id pair.
inline Dendrogram ward_cluster(const Eigen::MatrixXd& points) {
    const auto n = static_cast<std::size_t>(points.rows());
    if (n < 2) throw InputError("ward_cluster: at least 2 points required");
    if (points.cols() < 1) throw InputError("ward_cluster: at least 1 feature required");
    if (!points.allFinite()) throw InputError("ward_cluster: points contain missing or non-finite values");

    // Slot-indexed squared-distance matrix; slot s holds node node_of[s].
    Eigen::MatrixXd d2(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < d2.rows(); ++i) {
        d2(i, i) = 0.0;
        for (Eigen::Index j = 0; j < i; ++j) d2(i, j) = d2(j, i) = (points.row(i) - points.row(j)).squaredNorm();
    }
    std::vector<std::size_t> node_of(n), size_of(n, 1);
    std::iota(node_of.begin(), node_of.end(), std::size_t{0});
    std::vector<std::size_t> active(n);
    std::iota(active.begin(), active.end(), std::size_t{0});

    Dendrogram dg;
    dg.leaves = n;
    dg.merges.reserve(n - 1);
    for (std::size_t step = 0; step + 1 < n; ++step) {
        std::size_t bi = 0, bj = 0;
        double best = std::numeric_limits<double>::infinity();
        std::pair<std::size_t, std::size_t> best_ids{0, 0};
        for (std::size_t a = 0; a < active.size(); ++a) {
            for (std::size_t b = a + 1; b < active.size(); ++b) {
                const std::size_t si = active[a], sj = active[b];
                const double v = d2(static_cast<Eigen::Index>(si), static_cast<Eigen::Index>(sj));
                const std::pair<std::size_t, std::size_t> ids = std::minmax(node_of[si], node_of[sj]);
                if (v < best || (v == best && ids < best_ids)) {
                    best = v;
                    best_ids = ids;
                    bi = si;
                    bj = sj;
                }
            }
        }
        const double ni = static_cast<double>(size_of[bi]);
        const double nj = static_cast<double>(size_of[bj]);
        for (auto sk : active) {
            if (sk == bi || sk == bj) continue;
            const double nk = static_cast<double>(size_of[sk]);
            const auto k = static_cast<Eigen::Index>(sk);
            const double updated = ((ni + nk) * d2(k, static_cast<Eigen::Index>(bi)) +
                                    (nj + nk) * d2(k, static_cast<Eigen::Index>(bj)) - nk * best) /
                                   (ni + nj + nk);
            d2(k, static_cast<Eigen::Index>(bi)) = d2(static_cast<Eigen::Index>(bi), k) = updated;
        }
        dg.merges.push_back({best_ids.first, best_ids.second, std::sqrt(std::max(best, 0.0)), size_of[bi] + size_of[bj]});
        node_of[bi] = n + step;
        size_of[bi] += size_of[bj];
        active.erase(std::find(active.begin(), active.end(), bj));
    }
    return dg;
}

/// Flat partition into k groups labeled 1..k in order of each group's
/// first leaf.
inline std::vector<int> cut(const Dendrogram& dg, std::size_t k) {
    const std::size_t n = dg.leaves;
    if (k < 1 || k > n) throw InputError("cut: k must lie in [1, " + std::to_string(n) + "]");
    std::vector<std::size_t> parent(2 * n - 1);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (std::size_t m = 0; m < n - k; ++m) {
        const auto& mg = dg.merges[m];
        parent[find(mg.left)] = n + m;
        parent[find(mg.right)] = n + m;
    }
    std::vector<int> labels(n, 0);
    std::vector<int> label_of_root(2 * n - 1, 0);
    int next = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto root = find(i);
        if (label_of_root[root] == 0) label_of_root[root] = ++next;
        labels[i] = label_of_root[root];
    }
    return labels;
}

/// Sum over groups of squared distances to the group centroid.
inline double within_group_ss(const std::vector<int>& labels, const Eigen::MatrixXd& points) {
    const int k = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
    double total = 0.0;
    for (int g = 1; g <= k; ++g) {
        Eigen::RowVectorXd centroid = Eigen::RowVectorXd::Zero(points.cols());
        double count = 0.0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == g) {
                centroid += points.row(static_cast<Eigen::Index>(i));
                count += 1.0;
            }
        }
        if (count == 0.0) continue;
        centroid /= count;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == g) total += (points.row(static_cast<Eigen::Index>(i)) - centroid).squaredNorm();
        }
    }
    return total;
}

enum class LevelLabel { far_below, below, around, above, far_above };

inline std::string_view to_string(LevelLabel l) {
    switch (l) {
        case LevelLabel::far_below: return "far below average";
        case LevelLabel::below: return "below average";
        case LevelLabel::around: return "around average";
        case LevelLabel::above: return "above average";
        case LevelLabel::far_above: return "far above average";
    }
    return "around average";
}

struct ProfileThresholds {
    double around = 0.25;  ///< |m| below this is "around"
    double far = 1.0;      ///< |m| at or above this is "far"
};

inline LevelLabel level_label(double m, const ProfileThresholds& t = {}) {
    const double a = std::fabs(m);
    if (a < t.around) return LevelLabel::around;
    if (a < t.far) return m > 0 ? LevelLabel::above : LevelLabel::below;
    return m > 0 ? LevelLabel::far_above : LevelLabel::far_below;
}

struct GroupProfile {
    int group = 0;
    std::size_t count = 0;
    std::vector<double> means;  ///< per feature, standardized units
    std::vector<LevelLabel> labels;
};

/// Per-group standardized means and their qualitative labels.
inline std::vector<GroupProfile> profile(const std::vector<int>& assignments, const Eigen::MatrixXd& features,
                                         const std::vector<std::string>& feature_names,
                                         const ProfileThresholds& thresholds = {}) {
    if (static_cast<Eigen::Index>(assignments.size()) != features.rows()) {
        throw InputError("profile: assignments and features disagree on row count");
    }
    if (static_cast<Eigen::Index>(feature_names.size()) != features.cols()) {
        throw InputError("profile: feature names do not match feature columns");
    }
    const int k = assignments.empty() ? 0 : *std::max_element(assignments.begin(), assignments.end());
    std::vector<GroupProfile> out;
    for (int g = 1; g <= k; ++g) {
        GroupProfile gp{g, 0, std::vector<double>(feature_names.size(), 0.0), {}};
        for (std::size_t i = 0; i < assignments.size(); ++i) {
            if (assignments[i] != g) continue;
            ++gp.count;
            for (std::size_t j = 0; j < feature_names.size(); ++j) {
                gp.means[j] += features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            }
        }
        if (gp.count == 0) throw InputError("profile: group " + std::to_string(g) + " is empty");
        for (auto& m : gp.means) {
            m /= static_cast<double>(gp.count);
            gp.labels.push_back(level_label(m, thresholds));
        }
        out.push_back(std::move(gp));
    }
    return out;
}

}  // namespace tractscope
