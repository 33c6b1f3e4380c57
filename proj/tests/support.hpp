#pragma once

// Independent reference computations and fixtures shared by the test
// suites. Oracles deliberately avoid the library's own numerical paths.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tractscope/cluster.hpp"
#include "tractscope/ingest.hpp"
#include "tractscope/synthetic.hpp"
#include "tractscope/weights.hpp"

namespace testing_support {

using tractscope::AreaUnit;
using tractscope::Polygon;

// ---------------------------------------------------------------------------
// Oracles

/// Normal equations X'X b = X'y solved in long double by Gauss-Jordan
/// elimination with partial pivoting.
inline std::vector<long double> normal_equations_beta(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    const auto n = static_cast<std::size_t>(x.rows());
    const auto q = static_cast<std::size_t>(x.cols());
    std::vector<std::vector<long double>> a(q, std::vector<long double>(q + 1, 0.0L));
    for (std::size_t r = 0; r < q; ++r) {
        for (std::size_t c = 0; c < q; ++c) {
            long double s = 0.0L;
            for (std::size_t i = 0; i < n; ++i) {
                s += static_cast<long double>(x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(r))) *
                     static_cast<long double>(x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)));
            }
            a[r][c] = s;
        }
        long double s = 0.0L;
        for (std::size_t i = 0; i < n; ++i) {
            s += static_cast<long double>(x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(r))) *
                 static_cast<long double>(y(static_cast<Eigen::Index>(i)));
        }
        a[r][q] = s;
    }
    for (std::size_t col = 0; col < q; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < q; ++r) {
            if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
        }
        std::swap(a[col], a[piv]);
        for (std::size_t r = 0; r < q; ++r) {
            if (r == col) continue;
            const long double f = a[r][col] / a[col][col];
            for (std::size_t c = col; c <= q; ++c) a[r][c] -= f * a[col][c];
        }
    }
    std::vector<long double> beta(q);
    for (std::size_t r = 0; r < q; ++r) beta[r] = a[r][q] / a[r][r];
    return beta;
}

/// Gi* by explicit double loops over a dense binary matrix that includes
/// the diagonal, following the textbook formula term by term.
inline std::vector<double> gi_star_double_loop(const std::vector<std::vector<int>>& adjacent, const std::vector<double>& x) {
    const std::size_t n = x.size();
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        sum += x[j];
        sumsq += x[j] * x[j];
    }
    const double nd = static_cast<double>(n);
    const double xbar = sum / nd;
    const double s = std::sqrt(sumsq / nd - xbar * xbar);
    std::vector<double> z(n);
    for (std::size_t i = 0; i < n; ++i) {
        double wx = 0.0, wsum = 0.0, wsq = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double w = (i == j || adjacent[i][j]) ? 1.0 : 0.0;
            wx += w * x[j];
            wsum += w;
            wsq += w * w;
        }
        z[i] = (wx - xbar * wsum) / (s * std::sqrt((nd * wsq - wsum * wsum) / (nd - 1.0)));
    }
    return z;
}

/// ln|det(I - pW)| via dense LU with partial pivoting.
inline double dense_log_det(const Eigen::MatrixXd& w, double p) {
    const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(w.rows(), w.cols()) - p * w;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
    const Eigen::MatrixXd& packed = lu.matrixLU();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < packed.rows(); ++i) acc += std::log(std::fabs(packed(i, i)));
    return acc;
}

/// Naive Ward agglomeration: every step recomputes the merge cost of all
/// cluster pairs from member lists, cost = n_a n_b / (n_a + n_b) |c_a - c_b|^2,
/// reported height sqrt(2 cost).
inline std::vector<tractscope::Merge> naive_ward(const Eigen::MatrixXd& points) {
    const auto n = static_cast<std::size_t>(points.rows());
    struct Cluster {
        std::size_t id;
        std::vector<std::size_t> members;
    };
    std::vector<Cluster> clusters;
    for (std::size_t i = 0; i < n; ++i) clusters.push_back({i, {i}});
    auto centroid = [&](const Cluster& c) {
        Eigen::RowVectorXd m = Eigen::RowVectorXd::Zero(points.cols());
        for (auto i : c.members) m += points.row(static_cast<Eigen::Index>(i));
        return Eigen::RowVectorXd(m / static_cast<double>(c.members.size()));
    };
    std::vector<tractscope::Merge> merges;
    for (std::size_t step = 0; step + 1 < n; ++step) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t ba = 0, bb = 0;
        std::pair<std::size_t, std::size_t> best_ids{0, 0};
        for (std::size_t a = 0; a < clusters.size(); ++a) {
            for (std::size_t b = a + 1; b < clusters.size(); ++b) {
                const double na = static_cast<double>(clusters[a].members.size());
                const double nb = static_cast<double>(clusters[b].members.size());
                const double cost = na * nb / (na + nb) * (centroid(clusters[a]) - centroid(clusters[b])).squaredNorm();
                const std::pair<std::size_t, std::size_t> ids{std::min(clusters[a].id, clusters[b].id),
                                                              std::max(clusters[a].id, clusters[b].id)};
                if (cost < best || (cost == best && ids < best_ids)) {
                    best = cost;
                    best_ids = ids;
                    ba = a;
                    bb = b;
                }
            }
        }
        Cluster merged{n + step, clusters[ba].members};
        merged.members.insert(merged.members.end(), clusters[bb].members.begin(), clusters[bb].members.end());
        merges.push_back({best_ids.first, best_ids.second, std::sqrt(2.0 * best), merged.members.size()});
        clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bb));
        clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(ba));
        clusters.push_back(std::move(merged));
    }
    return merges;
}

/// Benjamini-Hochberg by definition: adjusted p of the i-th smallest is
/// min over j >= i of m p_(j) / j, capped at 1.
inline std::vector<double> bh_definitional(const std::vector<double>& p) {
    const std::size_t m = p.size();
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
    std::vector<double> adjusted(m);
    for (std::size_t i = 0; i < m; ++i) {
        double best = 1.0;
        for (std::size_t j = i; j < m; ++j) {
            best = std::min(best, static_cast<double>(m) * p[order[j]] / static_cast<double>(j + 1));
        }
        adjusted[order[i]] = best;
    }
    return adjusted;
}

/// Average ranks by counting, then Pearson correlation in long double.
inline double rank_then_pearson(const std::vector<double>& x, const std::vector<double>& y) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<long double> r(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            std::size_t below = 0, equal = 0;
            for (double u : v) {
                if (u < v[i]) ++below;
                if (u == v[i]) ++equal;
            }
            r[i] = static_cast<long double>(below) + (static_cast<long double>(equal) + 1.0L) / 2.0L;
        }
        return r;
    };
    const auto rx = ranks(x), ry = ranks(y);
    const auto n = static_cast<long double>(x.size());
    long double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    long double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

/// Condition number from the nonsymmetric eigensolver on the scaled Gram matrix.
inline double condition_number_eigen(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd s = x;
    for (Eigen::Index j = 0; j < s.cols(); ++j) s.col(j) /= s.col(j).norm();
    Eigen::EigenSolver<Eigen::MatrixXd> es(s.transpose() * s);
    const Eigen::VectorXd ev = es.eigenvalues().real();
    return std::sqrt(ev.maxCoeff() / ev.minCoeff());
}

inline Eigen::VectorXd dense_lag(const Eigen::MatrixXd& w, const Eigen::VectorXd& x) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(x.size());
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        for (Eigen::Index j = 0; j < w.cols(); ++j) out(i) += w(i, j) * x(j);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fixtures

inline AreaUnit square_unit(const std::string& id, double x, double y, double size = 1.0) {
    AreaUnit u;
    u.id = id;
    u.properties["id"] = id;
    u.polygons.push_back(tractscope::unit_square(x, y, size));
    return u;
}

inline AreaUnit rect_unit(const std::string& id, double x0, double y0, double x1, double y1) {
    AreaUnit u;
    u.id = id;
    u.polygons.push_back({{{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}, {x0, y0}}});
    return u;
}

inline std::vector<AreaUnit> grid(std::size_t rows, std::size_t cols) { return tractscope::lattice_units(rows, cols); }

/// Random guillotine tiling of [0, 1]^2 into `pieces` rectangles.
inline std::vector<AreaUnit> guillotine_tiling(std::size_t pieces, tractscope::NormalSource& rng) {
    struct Rect {
        double x0, y0, x1, y1;
    };
    std::vector<Rect> rects{{0.0, 0.0, 1.0, 1.0}};
    while (rects.size() < pieces) {
        std::size_t pick = 0;
        double area = 0.0;
        for (std::size_t k = 0; k < rects.size(); ++k) {
            const double a = (rects[k].x1 - rects[k].x0) * (rects[k].y1 - rects[k].y0);
            if (a > area) {
                area = a;
                pick = k;
            }
        }
        const Rect r = rects[pick];
        const double t = 0.25 + 0.5 * rng.uniform();
        rects.erase(rects.begin() + static_cast<std::ptrdiff_t>(pick));
        if (rng.uniform() < 0.5) {
            const double xm = r.x0 + t * (r.x1 - r.x0);
            rects.push_back({r.x0, r.y0, xm, r.y1});
            rects.push_back({xm, r.y0, r.x1, r.y1});
        } else {
            const double ym = r.y0 + t * (r.y1 - r.y0);
            rects.push_back({r.x0, r.y0, r.x1, ym});
            rects.push_back({r.x0, ym, r.x1, r.y1});
        }
    }
    std::vector<AreaUnit> units;
    for (std::size_t k = 0; k < rects.size(); ++k) {
        units.push_back(rect_unit("r" + std::to_string(k), rects[k].x0, rects[k].y0, rects[k].x1, rects[k].y1));
    }
    return units;
}

/// Irregular grid: jittered row and column lines, so shared corners are exact.
inline std::vector<AreaUnit> jittered_grid(std::size_t rows, std::size_t cols, tractscope::NormalSource& rng) {
    std::vector<double> xs{0.0}, ys{0.0};
    for (std::size_t c = 0; c < cols; ++c) xs.push_back(xs.back() + 0.5 + rng.uniform());
    for (std::size_t r = 0; r < rows; ++r) ys.push_back(ys.back() + 0.5 + rng.uniform());
    std::vector<AreaUnit> units;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            units.push_back(rect_unit("g" + std::to_string(r * cols + c), xs[c], ys[r], xs[c + 1], ys[r + 1]));
        }
    }
    return units;
}

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, tractscope::NormalSource& rng) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) m.col(j) = rng.normals(rows);
    return m;
}

inline std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("tractscope_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void spit(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

}  // namespace testing_support
