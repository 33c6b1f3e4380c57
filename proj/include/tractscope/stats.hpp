#pragma once

// Standardization, summary statistics, Spearman rank correlation and
// Benjamini-Hochberg false-discovery-rate control.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "tractscope/error.hpp"
#include "tractscope/ingest.hpp"

namespace tractscope {

/// Upper-tail probability of a chi-squared(df) variate.
inline double chi2_sf(double stat, double df) {
    if (df <= 0.0) return 1.0;
    if (!(stat > 0.0)) return 1.0;
    if (std::isinf(stat)) return 0.0;
    return boost::math::cdf(boost::math::complement(boost::math::chi_squared(df), stat));
}

/// 2 * (1 - Phi(|z|)).
inline double normal_two_sided_p(double z) {
    if (std::isinf(z)) return 0.0;
    return 2.0 * boost::math::cdf(boost::math::complement(boost::math::normal(), std::fabs(z)));
}

/// Two-sided Student-t p-value.
inline double t_two_sided_p(double t, double df) {
    if (std::isinf(t)) return 0.0;
    return 2.0 * boost::math::cdf(boost::math::complement(boost::math::students_t(df), std::fabs(t)));
}

inline double mean(const Eigen::Ref<const Eigen::VectorXd>& x) {
    if (x.size() == 0) throw InputError("mean of empty vector");
    return x.sum() / static_cast<double>(x.size());
}

/// Sample (n-1) standard deviation, two-pass.
inline double sample_sd(const Eigen::Ref<const Eigen::VectorXd>& x) {
    if (x.size() < 2) throw InputError("sample sd needs at least 2 values");
    const double m = mean(x);
    return std::sqrt((x.array() - m).square().sum() / static_cast<double>(x.size() - 1));
}

/// (x - mean) / sample sd.
inline Eigen::VectorXd zscore(const Eigen::Ref<const Eigen::VectorXd>& x) {
    if (x.size() < 2) throw InputError("zscore: at least 2 values required");
    const double m = mean(x);
    const double sd = sample_sd(x);
    if (!(sd > 0.0)) throw InputError("zscore: column is constant (sd = 0)");
    Eigen::VectorXd z = (x.array() - m) / sd;
    // Second centering pass absorbs the rounding of the first.
    z.array() -= z.mean();
    return z;
}

/// Column-wise zscore.
inline Eigen::MatrixXd zscore_columns(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd out(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) out.col(j) = zscore(x.col(j));
    return out;
}

struct SummaryRow {
    std::string name;
    double mean = 0.0;
    double sd = 0.0;
    std::size_t n = 0;
    bool degenerate = false;  ///< fewer than 2 observations, sd reported as 0
};

/// Per-column mean and sample SD over non-missing cells.
inline std::vector<SummaryRow> summarize(const AttributeTable& table) {
    std::vector<SummaryRow> out;
    for (std::size_t j = 0; j < table.columns.size(); ++j) {
        std::vector<double> vals;
        for (std::size_t i = 0; i < table.rows(); ++i) {
            if (!table.is_missing(i, j)) vals.push_back(table.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        }
        SummaryRow row{table.columns[j]};
        row.n = vals.size();
        if (vals.empty()) {
            row.mean = std::nan("");
            row.degenerate = true;
        } else {
            Eigen::Map<const Eigen::VectorXd> v(vals.data(), static_cast<Eigen::Index>(vals.size()));
            row.mean = mean(v);
            if (vals.size() < 2) {
                row.degenerate = true;
            } else {
                row.sd = sample_sd(v);
            }
        }
        out.push_back(std::move(row));
    }
    return out;
}

/// Ranks 1..n with ties sharing their average rank.
inline Eigen::VectorXd average_ranks(const Eigen::Ref<const Eigen::VectorXd>& x) {
    const auto n = static_cast<std::size_t>(x.size());
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return x(static_cast<Eigen::Index>(a)) < x(static_cast<Eigen::Index>(b));
    });
    Eigen::VectorXd ranks(x.size());
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x(static_cast<Eigen::Index>(order[j + 1])) == x(static_cast<Eigen::Index>(order[i]))) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks(static_cast<Eigen::Index>(order[k])) = avg;
        i = j + 1;
    }
    return ranks;
}

inline double pearson(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y) {
    const Eigen::ArrayXd dx = x.array() - mean(x);
    const Eigen::ArrayXd dy = y.array() - mean(y);
    const double sxx = dx.square().sum();
    const double syy = dy.square().sum();
    if (!(sxx > 0.0) || !(syy > 0.0)) throw InputError("correlation: constant input");
    return (dx * dy).sum() / std::sqrt(sxx * syy);
}

struct SpearmanResult {
    double rho = 0.0;
    double p = 1.0;
    std::size_t n = 0;
};

/// Spearman's rho with a t-approximation two-sided p-value.
inline SpearmanResult spearman(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y) {
    if (x.size() != y.size()) throw InputError("spearman: length mismatch");
    if (x.size() < 3) throw InputError("spearman: at least 3 pairs required");
    SpearmanResult r;
    r.n = static_cast<std::size_t>(x.size());
    r.rho = std::clamp(pearson(average_ranks(x), average_ranks(y)), -1.0, 1.0);
    if (std::fabs(r.rho) >= 1.0) {
        r.p = 0.0;
    } else {
        const double df = static_cast<double>(r.n) - 2.0;
        const double t = r.rho * std::sqrt(df / (1.0 - r.rho * r.rho));
        r.p = t_two_sided_p(t, df);
    }
    return r;
}

struct FdrResult {
    std::vector<double> raw_p;
    std::vector<double> adjusted_p;
    std::vector<bool> significant;
    double alpha = 0.05;
};

/// Benjamini-Hochberg step-up adjustment.
inline FdrResult bh_fdr(const std::vector<double>& pvalues, double alpha) {
    for (std::size_t i = 0; i < pvalues.size(); ++i) {
        if (!(pvalues[i] >= 0.0 && pvalues[i] <= 1.0)) {
            throw InputError("bh_fdr: p-value " + std::to_string(i) + " outside [0, 1]");
        }
    }
    const std::size_t m = pvalues.size();
    FdrResult r{pvalues, std::vector<double>(m), std::vector<bool>(m), alpha};
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pvalues[a] < pvalues[b]; });
    double running = 1.0;
    for (std::size_t k = m; k-- > 0;) {
        const double candidate = static_cast<double>(m) * pvalues[order[k]] / static_cast<double>(k + 1);
        running = std::min(running, candidate);
        r.adjusted_p[order[k]] = std::min(running, 1.0);
    }
    for (std::size_t i = 0; i < m; ++i) r.significant[i] = r.adjusted_p[i] <= alpha;
    return r;
}

/// "%.6g" rendering used by every delimited table.
inline std::string format_sig6(double v) {
    if (std::isnan(v)) return "NA";
    if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace tractscope
