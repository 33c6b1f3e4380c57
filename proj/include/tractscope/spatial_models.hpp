#pragma once

// Maximum-likelihood spatial lag and spatial error models.
//
// Both likelihoods are concentrated to one dimension in the spatial
// parameter; the Jacobian ln|I - pW| comes from the eigenvalues of the
// symmetric matrix D^(-1/2) A D^(-1/2), which shares its spectrum with the
// row-standardized W = D^(-1) A.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseLU>
#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/toms748_solve.hpp>

#include "tractscope/error.hpp"
#include "tractscope/ols.hpp"
#include "tractscope/stats.hpp"
#include "tractscope/weights.hpp"

namespace tractscope {

inline constexpr std::size_t kDenseEigenBudget = 10000;

struct SpectralCache {
    Eigen::VectorXd eigenvalues;  ///< ascending
    double lower = -1.0;          ///< 1 / omega_min
    double upper = 1.0;           ///< 1 / omega_max

    [[nodiscard]] bool contains(double p) const { return p > lower && p < upper; }
};

inline SpectralCache spectral_cache(const SpatialWeights& w, std::size_t max_n = kDenseEigenBudget) {
    if (w.mode != WeightMode::row_standardized) throw InputError("spectral_cache: weights must be row-standardized");
    if (!detect_islands(w.adjacency).empty()) throw InputError("spectral_cache: weights contain islands");
    const std::size_t n = w.size();
    if (n > max_n) {
        throw InputError("spectral_cache: n = " + std::to_string(n) + " exceeds the dense eigendecomposition budget of " +
                         std::to_string(max_n) + "; sparse log-determinant approximations are not supported");
    }
    const auto ni = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(ni, ni);
    for (std::size_t i = 0; i < n; ++i) {
        const double di = static_cast<double>(w.rows[i].size());
        for (const auto& e : w.rows[i]) {
            const double dj = static_cast<double>(w.rows[e.index].size());
            s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(e.index)) = 1.0 / std::sqrt(di * dj);
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s, Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success) throw NumericalError("spectral_cache: eigendecomposition failed");
    SpectralCache c;
    c.eigenvalues = eig.eigenvalues();
    const double lo = c.eigenvalues.minCoeff();
    const double hi = c.eigenvalues.maxCoeff();
    if (!(lo < 0.0) || !(hi > 0.0)) throw NumericalError("spectral_cache: spectrum does not straddle zero");
    c.lower = 1.0 / lo;
    c.upper = 1.0 / hi;
    return c;
}

/// ln|I - pW| = sum_i ln(1 - p omega_i).
inline double log_det(const SpectralCache& cache, double p) {
    if (!cache.contains(p)) {
        throw InputError("log_det: parameter " + std::to_string(p) + " outside (" + std::to_string(cache.lower) + ", " +
                         std::to_string(cache.upper) + ")");
    }
    double acc = 0.0;
    for (Eigen::Index i = 0; i < cache.eigenvalues.size(); ++i) acc += std::log1p(-p * cache.eigenvalues(i));
    return acc;
}

/// d/dp ln|I - pW| = -sum_i omega_i / (1 - p omega_i).
inline double log_det_derivative(const SpectralCache& cache, double p) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < cache.eigenvalues.size(); ++i) {
        acc -= cache.eigenvalues(i) / (1.0 - p * cache.eigenvalues(i));
    }
    return acc;
}

namespace detail {

inline double concentrated_constant(double n) {
    return -0.5 * n * (std::log(2.0 * std::numbers::pi) + 1.0);
}

inline double full_gaussian_ll(double sse, double sigma2, double n) {
    return -0.5 * n * std::log(2.0 * std::numbers::pi * sigma2) - sse / (2.0 * sigma2);
}

struct ScalarMax {
    double x = 0.0;
    double value = 0.0;
};

// Coarse scan then Brent (golden section + parabolic) on the bracket
// around the best scan point.
inline ScalarMax maximize_on_interval(const std::function<double(double)>& f, double lower, double upper) {
    const double width = upper - lower;
    const double lo = lower + 1e-7 * width;
    const double hi = upper - 1e-7 * width;
    constexpr int kScan = 40;
    std::vector<double> grid(kScan + 1);
    std::size_t best = 0;
    double best_val = -std::numeric_limits<double>::infinity();
    for (int k = 0; k <= kScan; ++k) {
        grid[static_cast<std::size_t>(k)] = lo + (hi - lo) * k / kScan;
        const double v = f(grid[static_cast<std::size_t>(k)]);
        if (v > best_val) {
            best_val = v;
            best = static_cast<std::size_t>(k);
        }
    }
    const double a = grid[best == 0 ? 0 : best - 1];
    const double b = grid[best == grid.size() - 1 ? best : best + 1];
    std::uintmax_t iterations = 500;
    auto res = boost::math::tools::brent_find_minima([&](double x) { return -f(x); }, a, b, 30, iterations);
    ScalarMax out{res.first, -res.second};
    if (best_val > out.value) out = {grid[best], best_val};
    const double pin = 1e-6 * width;
    if (out.x - lo < pin || hi - out.x < pin) {
        throw NumericalError("spatial ML: optimizer pinned at the parameter interval endpoint " +
                             std::to_string(out.x - lo < pin ? lower : upper));
    }
    return out;
}

// Function values pin a flat maximum only to about sqrt(eps), so the scan
// and Brent result is refined by bracketing a zero of the analytic score.
inline ScalarMax maximize_on_interval(const std::function<double(double)>& f, const std::function<double(double)>& score,
                                      double lower, double upper) {
    const ScalarMax coarse = maximize_on_interval(f, lower, upper);
    const double width = upper - lower;
    for (double step = 1e-6 * width; step < 1e-2 * width; step *= 4.0) {
        const double a = std::max(coarse.x - step, lower + 1e-7 * width);
        const double b = std::min(coarse.x + step, upper - 1e-7 * width);
        const double sa = score(a), sb = score(b);
        if (!(sa > 0.0) || !(sb < 0.0)) continue;
        std::uintmax_t iterations = 100;
        const auto root = boost::math::tools::toms748_solve(score, a, b, sa, sb,
                                                            boost::math::tools::eps_tolerance<double>(52), iterations);
        const double x = 0.5 * (root.first + root.second);
        const double value = f(x);
        if (value >= coarse.value - 1e-9 * std::max(1.0, std::fabs(coarse.value))) return {x, value};
        break;
    }
    return coarse;
}

// Central-difference Hessian with step 1e-5 * max(|theta_k|, 1).
inline Eigen::MatrixXd numerical_hessian(const std::function<double(const Eigen::VectorXd&)>& f,
                                         const Eigen::VectorXd& theta) {
    const Eigen::Index k = theta.size();
    Eigen::VectorXd h(k);
    for (Eigen::Index i = 0; i < k; ++i) h(i) = 1e-5 * std::max(std::fabs(theta(i)), 1.0);
    const double f0 = f(theta);
    Eigen::MatrixXd hess(k, k);
    for (Eigen::Index i = 0; i < k; ++i) {
        Eigen::VectorXd tp = theta, tm = theta;
        tp(i) += h(i);
        tm(i) -= h(i);
        hess(i, i) = (f(tp) - 2.0 * f0 + f(tm)) / (h(i) * h(i));
        for (Eigen::Index j = 0; j < i; ++j) {
            Eigen::VectorXd pp = theta, pm = theta, mp = theta, mm = theta;
            pp(i) += h(i); pp(j) += h(j);
            pm(i) += h(i); pm(j) -= h(j);
            mp(i) -= h(i); mp(j) += h(j);
            mm(i) -= h(i); mm(j) -= h(j);
            hess(i, j) = hess(j, i) = (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * h(i) * h(j));
        }
    }
    return hess;
}

}  // namespace detail

enum class SpatialKind { lag, error };

inline std::string_view to_string(SpatialKind k) { return k == SpatialKind::lag ? "lag" : "error"; }

struct SpatialFit {
    SpatialKind kind = SpatialKind::error;
    std::vector<std::string> names;  ///< coefficient names, intercept first
    double param = 0.0;              ///< rho (lag) or lambda (error)
    double param_se = std::numeric_limits<double>::quiet_NaN();
    double param_z = std::numeric_limits<double>::quiet_NaN();
    double param_p = std::numeric_limits<double>::quiet_NaN();
    Eigen::VectorXd beta;
    Eigen::VectorXd se;
    Eigen::VectorXd z;
    Eigen::VectorXd p;
    double sigma2 = 0.0;
    double log_likelihood = 0.0;
    double aic = 0.0;
    double pseudo_r2 = 0.0;
    Eigen::VectorXd fitted;     ///< y-hat used for pseudo R^2
    Eigen::VectorXd u;          ///< y - X beta (the spatially correlated disturbance for the error model)
    Eigen::VectorXd residuals;  ///< innovations epsilon
    bool se_available = true;
    double lower = -1.0;
    double upper = 1.0;
    std::size_t n = 0;
    std::size_t q = 0;
};

/// Concentrated log-likelihood of the spatial error model in lambda.
class ErrorModelProfile {
public:
    ErrorModelProfile(const DesignMatrix& x, const Eigen::VectorXd& y, const SpatialWeights& w, const SpectralCache& cache)
        : x_(x.values), y_(y), wx_(lag_columns(w, x.values)), wy_(lag(w, y)), cache_(cache) {
        if (w.size() != static_cast<std::size_t>(y.size()) || x.rows() != y.size()) {
            throw InputError("spatial error model: data and weights sizes differ");
        }
    }

    /// beta(lambda) and the filtered residual vector.
    [[nodiscard]] std::pair<Eigen::VectorXd, Eigen::VectorXd> filtered_fit(double lambda) const {
        const Eigen::MatrixXd xf = x_ - lambda * wx_;
        const Eigen::VectorXd yf = y_ - lambda * wy_;
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xf);
        Eigen::VectorXd beta = qr.solve(yf);
        Eigen::VectorXd resid = yf - xf * beta;
        return {std::move(beta), std::move(resid)};
    }

    [[nodiscard]] double operator()(double lambda) const {
        const double n = static_cast<double>(y_.size());
        const double sigma2 = filtered_fit(lambda).second.squaredNorm() / n;
        return detail::concentrated_constant(n) - 0.5 * n * std::log(sigma2) + log_det(cache_, lambda);
    }

    /// Derivative of the concentrated log-likelihood; beta drops out by the envelope theorem.
    [[nodiscard]] double score(double lambda) const {
        const auto [beta, e] = filtered_fit(lambda);
        const Eigen::VectorXd w_u = wy_ - wx_ * beta;
        return static_cast<double>(y_.size()) * e.dot(w_u) / e.squaredNorm() + log_det_derivative(cache_, lambda);
    }

    /// Unconcentrated log-likelihood at theta = (beta, lambda, sigma2).
    [[nodiscard]] double full(const Eigen::VectorXd& theta) const {
        const Eigen::Index q = x_.cols();
        const double lambda = theta(q);
        const double sigma2 = theta(q + 1);
        if (!cache_.contains(lambda) || !(sigma2 > 0.0)) return -std::numeric_limits<double>::infinity();
        const Eigen::VectorXd e = (y_ - lambda * wy_) - (x_ - lambda * wx_) * theta.head(q);
        return detail::full_gaussian_ll(e.squaredNorm(), sigma2, static_cast<double>(y_.size())) + log_det(cache_, lambda);
    }

private:
    Eigen::MatrixXd x_;
    Eigen::VectorXd y_;
    Eigen::MatrixXd wx_;
    Eigen::VectorXd wy_;
    const SpectralCache& cache_;
};

/// Concentrated log-likelihood of the spatial lag model in rho.
class LagModelProfile {
public:
    LagModelProfile(const DesignMatrix& x, const Eigen::VectorXd& y, const SpatialWeights& w, const SpectralCache& cache)
        : x_(x.values), y_(y), wy_(lag(w, y)), cache_(cache) {
        if (w.size() != static_cast<std::size_t>(y.size()) || x.rows() != y.size()) {
            throw InputError("spatial lag model: data and weights sizes differ");
        }
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x_);
        beta0_ = qr.solve(y_);
        beta_lag_ = qr.solve(wy_);
        e0_ = y_ - x_ * beta0_;
        e_lag_ = wy_ - x_ * beta_lag_;
    }

    [[nodiscard]] Eigen::VectorXd beta(double rho) const { return beta0_ - rho * beta_lag_; }

    [[nodiscard]] double operator()(double rho) const {
        const double n = static_cast<double>(y_.size());
        const double sigma2 = (e0_ - rho * e_lag_).squaredNorm() / n;
        return detail::concentrated_constant(n) - 0.5 * n * std::log(sigma2) + log_det(cache_, rho);
    }

    [[nodiscard]] double score(double rho) const {
        const Eigen::VectorXd e = e0_ - rho * e_lag_;
        return static_cast<double>(y_.size()) * e.dot(e_lag_) / e.squaredNorm() + log_det_derivative(cache_, rho);
    }

    /// Unconcentrated log-likelihood at theta = (beta, rho, sigma2).
    [[nodiscard]] double full(const Eigen::VectorXd& theta) const {
        const Eigen::Index q = x_.cols();
        const double rho = theta(q);
        const double sigma2 = theta(q + 1);
        if (!cache_.contains(rho) || !(sigma2 > 0.0)) return -std::numeric_limits<double>::infinity();
        const Eigen::VectorXd e = y_ - rho * wy_ - x_ * theta.head(q);
        return detail::full_gaussian_ll(e.squaredNorm(), sigma2, static_cast<double>(y_.size())) + log_det(cache_, rho);
    }

    [[nodiscard]] const Eigen::VectorXd& wy() const { return wy_; }

private:
    Eigen::MatrixXd x_;
    Eigen::VectorXd y_;
    Eigen::VectorXd wy_;
    Eigen::VectorXd beta0_, beta_lag_, e0_, e_lag_;
    const SpectralCache& cache_;
};

namespace detail {

inline void check_spatial_inputs(const DesignMatrix& x, const Eigen::VectorXd& y) {
    if (x.rows() != y.size()) throw InputError("spatial ML: response length does not match design rows");
    if (x.rows() <= x.cols() + 1) throw InputError("spatial ML: too few observations");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x.values);
    qr.setThreshold(kRankThreshold);
    if (qr.rank() < x.cols()) throw NumericalError("spatial ML: design matrix is rank deficient");
}

inline double squared_correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    try {
        const double r = pearson(a, b);
        return r * r;
    } catch (const InputError&) {
        return 0.0;
    }
}

inline void fill_inference(SpatialFit& fit, const Eigen::VectorXd& theta,
                           const std::function<double(const Eigen::VectorXd&)>& full) {
    const auto q = static_cast<Eigen::Index>(fit.q);
    const Eigen::MatrixXd hess = numerical_hessian(full, theta);
    Eigen::LLT<Eigen::MatrixXd> llt(-hess);
    fit.se = Eigen::VectorXd::Constant(q, std::numeric_limits<double>::quiet_NaN());
    fit.z = fit.se;
    fit.p = fit.se;
    if (llt.info() != Eigen::Success || !hess.allFinite()) {
        fit.se_available = false;
        return;
    }
    const Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(theta.size(), theta.size()));
    for (Eigen::Index k = 0; k < q; ++k) {
        fit.se(k) = std::sqrt(cov(k, k));
        fit.z(k) = fit.beta(k) / fit.se(k);
        fit.p(k) = normal_two_sided_p(fit.z(k));
    }
    fit.param_se = std::sqrt(cov(q, q));
    fit.param_z = fit.param / fit.param_se;
    fit.param_p = normal_two_sided_p(fit.param_z);
}

}  // namespace detail

/// Spatial error model y = X beta + u, u = lambda W u + eps.
inline SpatialFit fit_error_ml(const DesignMatrix& x, const Eigen::VectorXd& y, const SpatialWeights& w,
                               const SpectralCache& cache) {
    detail::check_spatial_inputs(x, y);
    ErrorModelProfile profile(x, y, w, cache);
    const auto best = detail::maximize_on_interval([&](double l) { return profile(l); },
                                                   [&](double l) { return profile.score(l); }, cache.lower, cache.upper);

    SpatialFit f;
    f.kind = SpatialKind::error;
    f.names = x.names;
    f.n = static_cast<std::size_t>(y.size());
    f.q = static_cast<std::size_t>(x.cols());
    f.lower = cache.lower;
    f.upper = cache.upper;
    f.param = best.x;
    f.log_likelihood = best.value;
    auto [beta, filtered] = profile.filtered_fit(best.x);
    f.beta = std::move(beta);
    f.residuals = std::move(filtered);
    f.sigma2 = f.residuals.squaredNorm() / static_cast<double>(f.n);
    f.fitted = x.values * f.beta;
    f.u = y - f.fitted;
    f.aic = -2.0 * f.log_likelihood + 2.0 * static_cast<double>(f.q + 1);
    f.pseudo_r2 = detail::squared_correlation(y, f.fitted);

    Eigen::VectorXd theta(x.cols() + 2);
    theta << f.beta, f.param, f.sigma2;
    detail::fill_inference(f, theta, [&](const Eigen::VectorXd& t) { return profile.full(t); });
    return f;
}

inline SpatialFit fit_error_ml(const DesignMatrix& x, const Eigen::VectorXd& y, const SpatialWeights& w) {
    return fit_error_ml(x, y, w, spectral_cache(w));
}

/// Spatial lag model y = rho W y + X beta + eps.
inline SpatialFit fit_lag_ml(const DesignMatrix& x, const Eigen::VectorXd& y, const SpatialWeights& w,
                             const SpectralCache& cache) {
    detail::check_spatial_inputs(x, y);
    LagModelProfile profile(x, y, w, cache);
    const auto best = detail::maximize_on_interval([&](double r) { return profile(r); },
                                                   [&](double r) { return profile.score(r); }, cache.lower, cache.upper);

    SpatialFit f;
    f.kind = SpatialKind::lag;
    f.names = x.names;
    f.n = static_cast<std::size_t>(y.size());
    f.q = static_cast<std::size_t>(x.cols());
    f.lower = cache.lower;
    f.upper = cache.upper;
    f.param = best.x;
    f.log_likelihood = best.value;
    f.beta = profile.beta(best.x);
    const Eigen::VectorXd xb = x.values * f.beta;
    f.residuals = y - f.param * profile.wy() - xb;
    f.sigma2 = f.residuals.squaredNorm() / static_cast<double>(f.n);
    f.u = y - xb;

    // y-hat = (I - rho W)^-1 X beta
    Eigen::SparseMatrix<double> a = -f.param * Eigen::SparseMatrix<double>(w.to_sparse());
    for (Eigen::Index i = 0; i < a.rows(); ++i) a.coeffRef(i, i) += 1.0;
    a.makeCompressed();
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(a);
    if (lu.info() != Eigen::Success) throw NumericalError("spatial lag model: (I - rho W) factorization failed");
    f.fitted = lu.solve(xb);
    f.aic = -2.0 * f.log_likelihood + 2.0 * static_cast<double>(f.q + 1);
    f.pseudo_r2 = detail::squared_correlation(y, f.fitted);

    Eigen::VectorXd theta(x.cols() + 2);
    theta << f.beta, f.param, f.sigma2;
    detail::fill_inference(f, theta, [&](const Eigen::VectorXd& t) { return profile.full(t); });
    return f;
}

inline SpatialFit fit_lag_ml(const DesignMatrix& x, const Eigen::VectorXd& y, const SpatialWeights& w) {
    return fit_lag_ml(x, y, w, spectral_cache(w));
}

struct ComparisonRow {
    std::string model;
    std::string measure_name;  ///< "adj_r2" or "pseudo_r2"
    double measure = 0.0;
    double aic = 0.0;
    std::size_t parameters = 0;
};

struct Comparison {
    std::vector<ComparisonRow> rows;
    std::string preferred;
    std::string note;
};

/// OLS vs spatial model by AIC; exact ties go to the smaller model.
inline Comparison compare(const OlsFit& ols, const SpatialFit& spatial) {
    if (ols.n != spatial.n) throw InputError("compare: models were fitted on different observation counts");
    Comparison c;
    c.rows.push_back({"OLS", "adj_r2", ols.adj_r2, ols.aic, ols.q});
    c.rows.push_back({spatial.kind == SpatialKind::error ? "spatial error" : "spatial lag", "pseudo_r2",
                      spatial.pseudo_r2, spatial.aic, spatial.q + 1});
    const auto& a = c.rows[0];
    const auto& b = c.rows[1];
    if (a.aic < b.aic || (a.aic == b.aic && a.parameters <= b.parameters)) {
        c.preferred = a.model;
    } else {
        c.preferred = b.model;
    }
    c.note = "adj_r2 (OLS) and pseudo_r2 = corr(y, y-hat)^2 (ML) are not strictly comparable; AIC decides";
    return c;
}

}  // namespace tractscope
