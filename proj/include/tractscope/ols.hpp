#pragma once

// Ordinary least squares with model selection (VIF pruning, bidirectional
// stepwise AIC, significance pruning), residual diagnostics and
// Lagrange-multiplier tests for spatial dependence.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "tractscope/error.hpp"
#include "tractscope/stats.hpp"
#include "tractscope/weights.hpp"

namespace tractscope {

inline constexpr double kInfiniteVif = std::numeric_limits<double>::infinity();

/// n x q regressors whose first column is the all-ones intercept.
struct DesignMatrix {
    std::vector<std::string> names;
    Eigen::MatrixXd values;

    [[nodiscard]] Eigen::Index rows() const { return values.rows(); }
    [[nodiscard]] Eigen::Index cols() const { return values.cols(); }

    /// Sub-design with the given column indices (index 0 is always kept first).
    [[nodiscard]] DesignMatrix select(const std::vector<std::size_t>& columns) const {
        DesignMatrix out;
        std::vector<std::size_t> cols{0};
        for (auto c : columns) {
            if (c != 0) cols.push_back(c);
        }
        out.values.resize(values.rows(), static_cast<Eigen::Index>(cols.size()));
        for (std::size_t k = 0; k < cols.size(); ++k) {
            out.values.col(static_cast<Eigen::Index>(k)) = values.col(static_cast<Eigen::Index>(cols[k]));
            out.names.push_back(names[cols[k]]);
        }
        return out;
    }
};

/// Prepends an intercept column to `predictors`.
inline DesignMatrix make_design(const Eigen::MatrixXd& predictors, const std::vector<std::string>& names) {
    if (static_cast<Eigen::Index>(names.size()) != predictors.cols()) {
        throw InputError("design matrix: name count does not match column count");
    }
    DesignMatrix d;
    d.names.reserve(names.size() + 1);
    d.names.emplace_back("intercept");
    d.names.insert(d.names.end(), names.begin(), names.end());
    d.values.resize(predictors.rows(), predictors.cols() + 1);
    d.values.col(0).setOnes();
    d.values.rightCols(predictors.cols()) = predictors;
    return d;
}

struct OlsFit {
    std::vector<std::string> names;
    Eigen::VectorXd beta;
    Eigen::VectorXd se;
    Eigen::VectorXd t;
    Eigen::VectorXd p;
    Eigen::VectorXd residuals;
    Eigen::VectorXd fitted;
    Eigen::MatrixXd xtx_inverse;
    double sse = 0.0;
    double sigma2_ml = 0.0;  ///< sse / n
    double sigma2 = 0.0;     ///< sse / (n - q)
    double r2 = 0.0;
    double adj_r2 = 0.0;
    double log_likelihood = 0.0;
    double aic = 0.0;
    std::size_t n = 0;
    std::size_t q = 0;
};

namespace detail {

inline constexpr double kRankThreshold = 1e-10;

inline double centered_ss(const Eigen::Ref<const Eigen::VectorXd>& y) {
    return (y.array() - y.mean()).square().sum();
}

// Least-squares residuals; rank-deficient X is tolerated.
inline Eigen::VectorXd lstsq_residuals(const Eigen::MatrixXd& x, const Eigen::Ref<const Eigen::VectorXd>& y) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    qr.setThreshold(kRankThreshold);
    return y - x * qr.solve(y);
}

inline double gaussian_log_likelihood(double sse, std::size_t n) {
    const double nd = static_cast<double>(n);
    return -0.5 * nd * (std::log(2.0 * std::numbers::pi) + std::log(sse / nd) + 1.0);
}

}  // namespace detail

/// Least squares via column-pivoted Householder QR. Rank deficiency is an
/// error naming the dependent columns.
inline OlsFit fit_ols(const DesignMatrix& x, const Eigen::Ref<const Eigen::VectorXd>& y) {
    const auto n = static_cast<std::size_t>(x.rows());
    const auto q = static_cast<std::size_t>(x.cols());
    if (static_cast<std::size_t>(y.size()) != n) throw InputError("ols: response length does not match design rows");
    if (n <= q) {
        throw InputError("ols: need more observations (" + std::to_string(n) + ") than coefficients (" +
                         std::to_string(q) + ")");
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x.values);
    qr.setThreshold(detail::kRankThreshold);
    const auto rank = static_cast<std::size_t>(qr.rank());
    if (rank < q) {
        std::string msg = "ols: design matrix is rank deficient; dependent column(s):";
        const auto& perm = qr.colsPermutation().indices();
        for (std::size_t k = rank; k < q; ++k) msg += " " + x.names[static_cast<std::size_t>(perm(static_cast<Eigen::Index>(k)))];
        throw NumericalError(msg);
    }

    OlsFit f;
    f.names = x.names;
    f.n = n;
    f.q = q;
    f.beta = qr.solve(y);
    f.fitted = x.values * f.beta;
    f.residuals = y - f.fitted;
    f.sse = f.residuals.squaredNorm();

    const auto qi = static_cast<Eigen::Index>(q);
    Eigen::MatrixXd r = qr.matrixR().topLeftCorner(qi, qi).triangularView<Eigen::Upper>();
    Eigen::MatrixXd r_inv = r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(qi, qi));
    Eigen::MatrixXd inner = r_inv * r_inv.transpose();
    const auto& perm = qr.colsPermutation();
    f.xtx_inverse = perm * inner * perm.transpose();

    const double nd = static_cast<double>(n);
    const double qd = static_cast<double>(q);
    f.sigma2_ml = f.sse / nd;
    f.sigma2 = f.sse / (nd - qd);
    const double sst = detail::centered_ss(y);
    if (sst > 0.0) {
        f.r2 = std::clamp(1.0 - f.sse / sst, 0.0, 1.0);
    } else {
        f.r2 = f.sse == 0.0 ? 1.0 : 0.0;
    }
    f.adj_r2 = 1.0 - (1.0 - f.r2) * (nd - 1.0) / (nd - qd);
    f.log_likelihood = detail::gaussian_log_likelihood(f.sse, n);
    f.aic = -2.0 * f.log_likelihood + 2.0 * qd;

    f.se.resize(qi);
    f.t.resize(qi);
    f.p.resize(qi);
    for (Eigen::Index k = 0; k < qi; ++k) {
        f.se(k) = std::sqrt(std::max(0.0, f.sigma2 * f.xtx_inverse(k, k)));
        if (f.se(k) > 0.0) {
            f.t(k) = f.beta(k) / f.se(k);
        } else {
            f.t(k) = f.beta(k) == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), f.beta(k));
        }
        f.p(k) = f.t(k) == 0.0 ? 1.0 : t_two_sided_p(f.t(k), nd - qd);
    }
    return f;
}

/// Variance inflation factor of every non-intercept column; perfect
/// collinearity yields kInfiniteVif.
inline std::vector<double> vif(const DesignMatrix& x) {
    const Eigen::Index q = x.cols();
    if (q < 3) throw InputError("vif: at least 2 non-intercept columns required");
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(q - 1));
    for (Eigen::Index j = 1; j < q; ++j) {
        Eigen::MatrixXd others(x.rows(), q - 1);
        others.leftCols(j) = x.values.leftCols(j);
        others.rightCols(q - 1 - j) = x.values.rightCols(q - 1 - j);
        const Eigen::VectorXd col = x.values.col(j);
        const double sst = detail::centered_ss(col);
        if (!(sst > 0.0)) {
            out.push_back(kInfiniteVif);
            continue;
        }
        const double rss = detail::lstsq_residuals(others, col).squaredNorm();
        const double tolerance = rss / sst;  // 1 - R^2
        out.push_back(tolerance <= 1e-12 ? kInfiniteVif : 1.0 / tolerance);
    }
    return out;
}

struct Removal {
    std::string name;
    double value = 0.0;  ///< VIF or p-value at removal
};

struct VifPruneResult {
    std::vector<std::size_t> retained;  ///< design column indices, 0 first
    std::vector<Removal> removed;
};

/// Drops the largest-VIF column while any VIF exceeds `threshold`,
/// recomputing after each removal. Ties go to the earlier column.
inline VifPruneResult vif_prune(const DesignMatrix& x, double threshold = 10.0) {
    VifPruneResult r;
    for (std::size_t c = 0; c < static_cast<std::size_t>(x.cols()); ++c) r.retained.push_back(c);
    while (r.retained.size() >= 3) {
        const auto v = vif(x.select(r.retained));
        std::size_t worst = 0;
        for (std::size_t k = 1; k < v.size(); ++k) {
            if (v[k] > v[worst]) worst = k;
        }
        if (!(v[worst] > threshold)) break;
        const std::size_t column = r.retained[worst + 1];
        r.removed.push_back({x.names[column], v[worst]});
        r.retained.erase(r.retained.begin() + static_cast<std::ptrdiff_t>(worst + 1));
    }
    return r;
}

struct StepRecord {
    std::string action;  ///< "start", "add" or "remove"
    std::string column;
    double aic = 0.0;
};

struct StepwiseResult {
    std::vector<std::size_t> selected;  ///< design column indices, ascending, 0 first
    std::vector<StepRecord> trace;
    double aic = 0.0;
};

/// Bidirectional stepwise search by AIC starting from the full model. Each
/// step scores every single-column deletion and addition and takes the
/// lowest-AIC move if it strictly improves; ties go to the lower column index.
/// Candidate models that are rank deficient are skipped.
inline StepwiseResult stepwise_aic(const DesignMatrix& x, const Eigen::Ref<const Eigen::VectorXd>& y) {
    const auto q = static_cast<std::size_t>(x.cols());
    std::vector<bool> in(q, true);
    auto columns_of = [&](const std::vector<bool>& mask) {
        std::vector<std::size_t> cols;
        for (std::size_t c = 0; c < q; ++c) {
            if (mask[c]) cols.push_back(c);
        }
        return cols;
    };

    StepwiseResult r;
    double current = fit_ols(x, y).aic;
    r.trace.push_back({"start", "", current});
    for (;;) {
        std::optional<std::size_t> best_col;
        double best_aic = std::numeric_limits<double>::infinity();
        for (std::size_t c = 1; c < q; ++c) {
            auto mask = in;
            mask[c] = !mask[c];
            double aic = 0.0;
            try {
                aic = fit_ols(x.select(columns_of(mask)), y).aic;
            } catch (const NumericalError&) {
                continue;
            } catch (const InputError&) {
                continue;
            }
            if (aic < best_aic) {
                best_aic = aic;
                best_col = c;
            }
        }
        if (!best_col || !(best_aic < current)) break;
        r.trace.push_back({in[*best_col] ? "remove" : "add", x.names[*best_col], best_aic});
        in[*best_col] = !in[*best_col];
        current = best_aic;
    }
    r.selected = columns_of(in);
    r.aic = current;
    return r;
}

struct SignificancePruneResult {
    OlsFit fit;
    std::vector<std::size_t> retained;  ///< design column indices, 0 first
    std::vector<Removal> removed;
};

/// Repeatedly refits after removing the non-intercept coefficient with the
/// largest p >= alpha (earliest column on ties).
inline SignificancePruneResult significance_prune(const DesignMatrix& x, const Eigen::Ref<const Eigen::VectorXd>& y,
                                                  double alpha = 0.05) {
    SignificancePruneResult r;
    for (std::size_t c = 0; c < static_cast<std::size_t>(x.cols()); ++c) r.retained.push_back(c);
    for (;;) {
        r.fit = fit_ols(x.select(r.retained), y);
        std::optional<std::size_t> worst;
        for (std::size_t k = 1; k < r.retained.size(); ++k) {
            const double pk = r.fit.p(static_cast<Eigen::Index>(k));
            if (pk >= alpha && (!worst || pk > r.fit.p(static_cast<Eigen::Index>(*worst)))) worst = k;
        }
        if (!worst) break;
        r.removed.push_back({x.names[r.retained[*worst]], r.fit.p(static_cast<Eigen::Index>(*worst))});
        r.retained.erase(r.retained.begin() + static_cast<std::ptrdiff_t>(*worst));
    }
    return r;
}

struct TestResult {
    double stat = 0.0;
    double p = 1.0;
    double df = 0.0;
};

/// n/6 (S^2 + (K - 3)^2 / 4) with divisor-n moments, against chi-squared(2).
inline TestResult jarque_bera(const Eigen::Ref<const Eigen::VectorXd>& residuals) {
    const auto n = residuals.size();
    if (n < 8) throw InputError("jarque_bera: at least 8 residuals required");
    const Eigen::ArrayXd d = residuals.array() - residuals.mean();
    const double nd = static_cast<double>(n);
    const double m2 = d.square().sum() / nd;
    if (!(m2 > 0.0)) throw NumericalError("jarque_bera: residuals have zero variance");
    const double m3 = d.cube().sum() / nd;
    const double m4 = d.square().square().sum() / nd;
    const double skew = m3 / std::pow(m2, 1.5);
    const double kurt = m4 / (m2 * m2);
    const double stat = nd / 6.0 * (skew * skew + (kurt - 3.0) * (kurt - 3.0) / 4.0);
    return {stat, chi2_sf(stat, 2.0), 2.0};
}

/// Studentized Breusch-Pagan: n R^2 from regressing e^2 on the design,
/// against chi-squared(q - 1).
inline TestResult koenker_bassett(const DesignMatrix& x, const Eigen::Ref<const Eigen::VectorXd>& residuals) {
    if (residuals.size() != x.rows()) throw InputError("koenker_bassett: residual length does not match design rows");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x.values);
    qr.setThreshold(detail::kRankThreshold);
    if (qr.rank() < x.cols()) throw NumericalError("koenker_bassett: design matrix is rank deficient");
    const Eigen::VectorXd e2 = residuals.array().square().matrix();
    const double sst = detail::centered_ss(e2);
    const double df = static_cast<double>(x.cols() - 1);
    if (!(sst > 0.0)) return {0.0, 1.0, df};
    const double rss = (e2 - x.values * qr.solve(e2)).squaredNorm();
    const double r2 = std::clamp(1.0 - rss / sst, 0.0, 1.0);
    const double stat = static_cast<double>(x.rows()) * r2;
    return {stat, chi2_sf(stat, df), df};
}

/// sqrt(lambda_max / lambda_min) of the Gram matrix of unit-norm columns.
inline double condition_number(const DesignMatrix& x) {
    Eigen::MatrixXd scaled = x.values;
    for (Eigen::Index j = 0; j < scaled.cols(); ++j) {
        const double norm = scaled.col(j).norm();
        if (!(norm > 0.0)) throw InputError("condition_number: column '" + x.names[static_cast<std::size_t>(j)] + "' is zero");
        scaled.col(j) /= norm;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(scaled.transpose() * scaled, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 1e-14 * hi)) return std::numeric_limits<double>::infinity();
    return std::sqrt(hi / lo);
}

struct LmSuite {
    TestResult lm_lag;
    TestResult lm_error;
    TestResult robust_lm_lag;
    TestResult robust_lm_error;
    bool degenerate = false;  ///< J <= T; robust statistics set to 0
    double trace_term = 0.0;  ///< T = tr((W' + W) W)
    double j_term = 0.0;      ///< J
};

namespace detail {

inline double weight_at(const SpatialWeights& w, std::size_t i, std::size_t j) {
    const auto& row = w.rows[i];
    auto it = std::lower_bound(row.begin(), row.end(), j,
                               [](const WeightEntry& e, std::size_t idx) { return e.index < idx; });
    return (it != row.end() && it->index == j) ? it->weight : 0.0;
}

inline double trace_wtw_plus_ww(const SpatialWeights& w) {
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        for (const auto& e : w.rows[i]) acc += e.weight * (e.weight + weight_at(w, e.index, i));
    }
    return acc;
}

}  // namespace detail

/// LM-lag, LM-error and their robust variants from OLS residuals, each
/// against chi-squared(1).
inline LmSuite lm_tests(const DesignMatrix& x, const Eigen::Ref<const Eigen::VectorXd>& y, const OlsFit& ols,
                        const SpatialWeights& w) {
    if (w.mode != WeightMode::row_standardized) throw InputError("lm_tests: weights must be row-standardized");
    if (!detect_islands(w.adjacency).empty()) throw InputError("lm_tests: weights contain islands");
    if (w.size() != static_cast<std::size_t>(y.size())) throw InputError("lm_tests: weights size does not match data");

    const auto& e = ols.residuals;
    const double nd = static_cast<double>(y.size());
    const double sigma2 = e.squaredNorm() / nd;
    if (!(sigma2 > 0.0)) throw NumericalError("lm_tests: residual variance is zero");
    const double d_e = e.dot(lag(w, e)) / sigma2;
    const double d_y = e.dot(lag(w, y)) / sigma2;
    const double t = detail::trace_wtw_plus_ww(w);
    const Eigen::VectorXd wxb = lag(w, ols.fitted);
    const Eigen::VectorXd m_wxb = detail::lstsq_residuals(x.values, wxb);
    const double j = (m_wxb.squaredNorm() + t * sigma2) / sigma2;

    LmSuite s;
    s.trace_term = t;
    s.j_term = j;
    auto chi1 = [](double stat) { return TestResult{stat, chi2_sf(stat, 1.0), 1.0}; };
    s.lm_error = chi1(d_e * d_e / t);
    s.lm_lag = chi1(d_y * d_y / j);
    if (!(j - t > 0.0) || !(t > 0.0)) {
        s.degenerate = true;
        s.robust_lm_lag = chi1(0.0);
        s.robust_lm_error = chi1(0.0);
        return s;
    }
    s.robust_lm_lag = chi1((d_y - d_e) * (d_y - d_e) / (j - t));
    const double adj = d_e - (t / j) * d_y;
    s.robust_lm_error = chi1(adj * adj / (t * (1.0 - t / j)));
    return s;
}

enum class ModelChoice { stay_ols, fit_lag, fit_error, deferred };

inline std::string_view to_string(ModelChoice c) {
    switch (c) {
        case ModelChoice::stay_ols: return "stay-OLS";
        case ModelChoice::fit_lag: return "fit-lag";
        case ModelChoice::fit_error: return "fit-error";
        case ModelChoice::deferred: return "deferred";
    }
    return "deferred";
}

struct ModelDecision {
    ModelChoice choice = ModelChoice::stay_ols;
    std::string reason;
    bool warning = false;
};

/// Standard LM decision rule: plain tests first, robust variants to break
/// a double rejection. A degenerate suite defers to the user.
inline ModelDecision model_decision(const LmSuite& s, double alpha = 0.05) {
    if (s.degenerate) return {ModelChoice::deferred, "robust LM denominators are degenerate (J <= T)", true};
    const bool lag_sig = s.lm_lag.p < alpha;
    const bool err_sig = s.lm_error.p < alpha;
    if (!lag_sig && !err_sig) return {ModelChoice::stay_ols, "neither LM-lag nor LM-error is significant", false};
    if (lag_sig && !err_sig) return {ModelChoice::fit_lag, "only LM-lag is significant", false};
    if (!lag_sig && err_sig) return {ModelChoice::fit_error, "only LM-error is significant", false};
    const bool rlag_sig = s.robust_lm_lag.p < alpha;
    const bool rerr_sig = s.robust_lm_error.p < alpha;
    if (!rlag_sig && !rerr_sig) {
        return {ModelChoice::stay_ols, "both LM tests significant but neither robust variant is", true};
    }
    if (s.robust_lm_error.stat >= s.robust_lm_lag.stat) {
        return rerr_sig ? ModelDecision{ModelChoice::fit_error, "robust LM-error exceeds robust LM-lag", false}
                        : ModelDecision{ModelChoice::fit_lag, "only robust LM-lag is significant", false};
    }
    return rlag_sig ? ModelDecision{ModelChoice::fit_lag, "robust LM-lag exceeds robust LM-error", false}
                    : ModelDecision{ModelChoice::fit_error, "only robust LM-error is significant", false};
}

}  // namespace tractscope
