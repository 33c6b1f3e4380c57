#pragma once

// Lattice geometries and simulated spatial-process data. The normal
// generator is Box-Muller over mt19937_64 so draws are identical on every
// standard library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseLU>

#include "tractscope/error.hpp"
#include "tractscope/ingest.hpp"
#include "tractscope/stats.hpp"
#include "tractscope/weights.hpp"

namespace tractscope {

class NormalSource {
public:
    explicit NormalSource(std::uint64_t seed) : engine_(seed) {}

    double uniform() {
        // 53-bit mantissa in (0, 1)
        return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double r = std::sqrt(-2.0 * std::log(uniform()));
        const double theta = 2.0 * std::numbers::pi * uniform();
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    Eigen::VectorXd normals(Eigen::Index n) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v(i) = normal();
        return v;
    }

    double exponential() { return -std::log(uniform()); }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Unit square at column c, row r.
inline Polygon unit_square(double c, double r, double size = 1.0) {
    return {{{c, r}, {c + size, r}, {c + size, r + size}, {c, r + size}, {c, r}}};
}

/// rows x cols grid of unit squares, row-major, ids from `id_of(index)`.
template <typename IdFn>
std::vector<AreaUnit> lattice_units(std::size_t rows, std::size_t cols, IdFn id_of) {
    std::vector<AreaUnit> units;
    units.reserve(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            AreaUnit u;
            u.id = id_of(r * cols + c);
            u.properties["id"] = u.id;
            u.polygons.push_back(unit_square(static_cast<double>(c), static_cast<double>(r)));
            units.push_back(std::move(u));
        }
    }
    return units;
}

inline std::vector<AreaUnit> lattice_units(std::size_t rows, std::size_t cols) {
    return lattice_units(rows, cols, [](std::size_t k) { return std::to_string(k); });
}

/// Row-standardized queen weights of a rows x cols lattice.
inline SpatialWeights lattice_queen_weights(std::size_t rows, std::size_t cols) {
    return to_weights(queen_contiguity(lattice_units(rows, cols), 1e-9), WeightMode::row_standardized);
}

/// Solves (I - p W) v = b with one factorization reused across calls.
class SpatialFilterSolver {
public:
    SpatialFilterSolver(const SpatialWeights& w, double p) {
        Eigen::SparseMatrix<double> a = -p * Eigen::SparseMatrix<double>(w.to_sparse());
        for (Eigen::Index i = 0; i < a.rows(); ++i) a.coeffRef(i, i) += 1.0;
        a.makeCompressed();
        lu_.compute(a);
        if (lu_.info() != Eigen::Success) throw NumericalError("spatial filter: factorization failed");
    }

    [[nodiscard]] Eigen::VectorXd solve(const Eigen::VectorXd& b) { return lu_.solve(b); }

private:
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu_;
};

/// y = X beta + (I - lambda W)^-1 eps, eps ~ N(0, sigma^2).
inline Eigen::VectorXd simulate_error_process(SpatialFilterSolver& filter, const Eigen::MatrixXd& x,
                                              const Eigen::VectorXd& beta, NormalSource& rng, double sigma = 1.0) {
    return x * beta + filter.solve(sigma * rng.normals(x.rows()));
}

/// y = (I - rho W)^-1 (X beta + eps), eps ~ N(0, sigma^2).
inline Eigen::VectorXd simulate_lag_process(SpatialFilterSolver& filter, const Eigen::MatrixXd& x,
                                            const Eigen::VectorXd& beta, NormalSource& rng, double sigma = 1.0) {
    return filter.solve(x * beta + sigma * rng.normals(x.rows()));
}

/// Intercept plus `k` independent standard-normal columns.
inline Eigen::MatrixXd simulate_design(Eigen::Index n, Eigen::Index k, NormalSource& rng) {
    Eigen::MatrixXd x(n, k + 1);
    x.col(0).setOnes();
    for (Eigen::Index j = 1; j <= k; ++j) x.col(j) = rng.normals(n);
    return x;
}

struct SyntheticCounty {
    std::vector<AreaUnit> units;  ///< lattice tracts plus unmatched extras
    std::string attributes_csv;
    std::vector<std::string> unmatched_ids;
};

/// 20 x 20 tract lattice with 13 risk-factor columns and an outcome built
/// on a spatial-error process with lambda = 0.5. Two extra tracts exist only
/// in the geometry. The "inactivity" column is a near-linear combination of
/// other predictors, and four predictors carry no signal.
inline SyntheticCounty make_synthetic_county(std::uint64_t seed = 20200531) {
    constexpr std::size_t kSide = 20;
    const auto n = static_cast<Eigen::Index>(kSide * kSide);
    auto tract_id = [](std::size_t k) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%06zu", 100 * (k + 1));
        return std::string(buf);
    };
    SyntheticCounty county;
    county.units = lattice_units(kSide, kSide, tract_id);
    for (auto& u : county.units) {
        u.properties.erase("id");
        u.properties["GEOID"] = "47157" + u.id;
        u.properties["tract"] = u.id;
    }
    county.unmatched_ids = {"980200", "980300"};
    for (std::size_t e = 0; e < county.unmatched_ids.size(); ++e) {
        AreaUnit u;
        u.id = county.unmatched_ids[e];
        u.properties["GEOID"] = "47157" + u.id;
        u.properties["tract"] = u.id;
        u.polygons.push_back(unit_square(static_cast<double>(e), -1.0));
        county.units.push_back(std::move(u));
    }

    NormalSource rng(seed);
    const SpatialWeights w = lattice_queen_weights(kSide, kSide);
    SpatialFilterSolver smooth(w, 0.8);
    auto field = [&]() { return zscore(smooth.solve(rng.normals(n))); };
    const Eigen::VectorXd deprivation = field();
    const Eigen::VectorXd urban = field();
    const Eigen::VectorXd age = field();
    auto mix = [&](double a, const Eigen::VectorXd& f1, double b, const Eigen::VectorXd& f2) {
        return zscore(a * f1 + b * f2 + std::sqrt(std::max(0.0, 1.0 - a * a - b * b)) * rng.normals(n));
    };

    struct Column {
        std::string name;
        Eigen::VectorXd z;
        double mean;
        double sd;
        double effect;  ///< outcome coefficient in standardized units
    };
    std::vector<Column> cols;
    cols.push_back({"median_income", mix(-0.55, deprivation, 0.1, urban), 45000.0, 18000.0, -0.30});
    cols.push_back({"black_pct", mix(0.5, deprivation, 0.2, urban), 52.0, 30.0, 0.45});
    cols.push_back({"poverty_pct", mix(0.6, deprivation, 0.0, urban), 21.0, 12.0, 0.35});
    cols.push_back({"uninsured_pct", mix(0.45, deprivation, 0.15, age), 13.0, 6.0, 0.40});
    cols.push_back({"age55_pct", mix(0.6, age, -0.1, urban), 27.0, 8.0, 0.25});
    cols.push_back({"single_pct", mix(0.3, urban, 0.3, deprivation), 38.0, 10.0, 0.20});
    cols.push_back({"unemployed_pct", mix(0.4, deprivation, 0.0, urban), 9.0, 5.0, 0.20});
    cols.push_back({"renters_pct", mix(0.55, urban, 0.0, age), 45.0, 20.0, 0.30});
    cols.push_back({"household_size", mix(0.2, age, 0.0, urban), 2.6, 0.4, 0.0});
    cols.push_back({"low_access_pct", mix(0.25, urban, 0.0, age), 30.0, 15.0, 0.0});
    cols.push_back({"female_head_pct", mix(0.35, deprivation, 0.0, urban), 20.0, 9.0, 0.0});
    cols.push_back({"no_hs_pct", mix(0.4, deprivation, 0.0, age), 14.0, 8.0, 0.0});
    {
        const Eigen::VectorXd inactivity = 0.5 * cols[2].z + 0.45 * cols[3].z + 0.35 * cols[0].z * -1.0 +
                                           0.3 * cols[1].z + 0.12 * rng.normals(n);
        cols.push_back({"inactivity_pct", zscore(inactivity), 33.0, 7.0, 0.0});
    }

    Eigen::VectorXd signal = Eigen::VectorXd::Zero(n);
    for (const auto& c : cols) signal += c.effect * c.z;
    SpatialFilterSolver error_filter(w, 0.5);
    const Eigen::VectorXd outcome_z = signal + error_filter.solve(0.35 * rng.normals(n));
    const Eigen::VectorXd obesity = 35.77 + 7.84 * zscore(outcome_z).array();

    std::string csv = "tract,obesity_pct";
    for (const auto& c : cols) csv += "," + c.name;
    csv += "\n";
    char buf[64];
    for (Eigen::Index i = 0; i < n; ++i) {
        csv += county.units[static_cast<std::size_t>(i)].id;
        std::snprintf(buf, sizeof buf, ",%.4f", obesity(i));
        csv += buf;
        for (const auto& c : cols) {
            std::snprintf(buf, sizeof buf, ",%.4f", c.mean + c.sd * c.z(i));
            csv += buf;
        }
        csv += "\n";
    }
    county.attributes_csv = std::move(csv);
    return county;
}

/// Pipeline configuration for the synthetic county, with paths relative to
/// the directory holding it.
inline std::string synthetic_county_config(const std::string& output_dir = "out") {
    return "# Synthetic 20 x 20 tract county\n"
           "geometry_path = tracts.geojson\n"
           "attributes_path = attributes.csv\n"
           "id_property = tract\n"
           "id_column = tract\n"
           "outcome_column = obesity_pct\n"
           "candidate_predictor_columns = median_income, black_pct, poverty_pct, uninsured_pct, age55_pct, "
           "single_pct, unemployed_pct, renters_pct, household_size, low_access_pct, female_head_pct, no_hs_pct, "
           "inactivity_pct\n"
           "spearman_column = inactivity_pct\n"
           "contiguity = queen\n"
           "alpha = 0.05\n"
           "vif_threshold = 10\n"
           "fdr_alpha = 0.05\n"
           "group_k = 5\n"
           "top_features_for_grouping = 4\n"
           "merge_policy = drop\n"
           "output_dir = " + output_dir + "\n";
}

}  // namespace tractscope
