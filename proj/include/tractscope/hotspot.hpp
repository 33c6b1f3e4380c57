#pragma once

// Getis-Ord Gi* local statistic and hot/cold spot classification.

#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "tractscope/error.hpp"
#include "tractscope/stats.hpp"
#include "tractscope/weights.hpp"

namespace tractscope {

enum class HotspotClass { hot99, hot95, hot90, none, cold90, cold95, cold99 };

/// Legend order, hottest first.
inline constexpr HotspotClass kHotspotClasses[] = {HotspotClass::hot99,  HotspotClass::hot95,  HotspotClass::hot90,
                                                   HotspotClass::none,   HotspotClass::cold90, HotspotClass::cold95,
                                                   HotspotClass::cold99};

inline std::string_view to_string(HotspotClass c) {
    switch (c) {
        case HotspotClass::hot99: return "hot99";
        case HotspotClass::hot95: return "hot95";
        case HotspotClass::hot90: return "hot90";
        case HotspotClass::none: return "none";
        case HotspotClass::cold90: return "cold90";
        case HotspotClass::cold95: return "cold95";
        case HotspotClass::cold99: return "cold99";
    }
    return "none";
}

/// Tightest of the 0.01 / 0.05 / 0.10 tiers that adjusted_p falls below
/// (strictly), signed by z.
inline HotspotClass classify(double z, double adjusted_p) {
    if (z == 0.0 || !std::isfinite(z)) return HotspotClass::none;
    const bool hot = z > 0.0;
    if (adjusted_p < 0.01) return hot ? HotspotClass::hot99 : HotspotClass::cold99;
    if (adjusted_p < 0.05) return hot ? HotspotClass::hot95 : HotspotClass::cold95;
    if (adjusted_p < 0.10) return hot ? HotspotClass::hot90 : HotspotClass::cold90;
    return HotspotClass::none;
}

struct HotspotResult {
    Eigen::VectorXd z;
    Eigen::VectorXd p;
    Eigen::VectorXd adjusted_p;
    std::vector<HotspotClass> classes;
};

/// Gi* z-scores with normal two-sided p-values, BH-adjusted at `fdr_alpha`.
/// `w` must be binary with the self weight included. A unit whose
/// neighborhood spans every unit has zero variance under the null; it is
/// reported with z = 0, p = 1.
inline HotspotResult gi_star(const SpatialWeights& w, const Eigen::Ref<const Eigen::VectorXd>& x,
                             double fdr_alpha = 0.05) {
    if (w.mode != WeightMode::binary || !w.include_self) {
        throw InputError("gi_star: weights must be binary with the self weight included");
    }
    const auto n = static_cast<std::size_t>(x.size());
    if (n != w.size()) throw InputError("gi_star: vector length does not match weights size");
    if (n < 3) throw InputError("gi_star: at least 3 units required");

    const double nd = static_cast<double>(n);
    const double xbar = x.sum() / nd;
    const double s = std::sqrt((x.array() - xbar).square().sum() / nd);
    if (!(s > 0.0)) throw InputError("gi_star: outcome is constant (S = 0)");

    HotspotResult r;
    r.z.resize(x.size());
    r.p.resize(x.size());
    for (std::size_t i = 0; i < n; ++i) {
        double wsum = 0.0, wsq = 0.0, wx = 0.0;
        for (const auto& e : w.rows[i]) {
            wsum += e.weight;
            wsq += e.weight * e.weight;
            wx += e.weight * x(static_cast<Eigen::Index>(e.index));
        }
        const double var_term = (nd * wsq - wsum * wsum) / (nd - 1.0);
        const auto k = static_cast<Eigen::Index>(i);
        if (!(var_term > 0.0)) {
            r.z(k) = 0.0;
            r.p(k) = 1.0;
            continue;
        }
        r.z(k) = (wx - xbar * wsum) / (s * std::sqrt(var_term));
        r.p(k) = normal_two_sided_p(r.z(k));
    }
    auto fdr = bh_fdr(std::vector<double>(r.p.data(), r.p.data() + r.p.size()), fdr_alpha);
    r.adjusted_p = Eigen::Map<const Eigen::VectorXd>(fdr.adjusted_p.data(), r.p.size());
    r.classes.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        r.classes.push_back(classify(r.z(static_cast<Eigen::Index>(i)), r.adjusted_p(static_cast<Eigen::Index>(i))));
    }
    return r;
}

}  // namespace tractscope
