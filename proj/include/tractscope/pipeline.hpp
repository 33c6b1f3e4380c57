#pragma once

// Configuration-driven analysis pipeline: ingest -> weights -> summary ->
// Gi* hot spots -> model selection and diagnostics -> LM decision ->
// spatial ML fit -> Ward grouping -> Spearman table, with every stage's
// tables, maps and report sections written to an output directory.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tractscope/cluster.hpp"
#include "tractscope/error.hpp"
#include "tractscope/hotspot.hpp"
#include "tractscope/ingest.hpp"
#include "tractscope/ols.hpp"
#include "tractscope/render.hpp"
#include "tractscope/spatial_models.hpp"
#include "tractscope/stats.hpp"
#include "tractscope/weights.hpp"

namespace tractscope {

inline constexpr std::string_view kToolName = "tractscope";
inline constexpr std::string_view kToolVersion = "1.0.0";

enum class Contiguity { queen, rook };

struct PipelineConfig {
    std::string geometry_path;
    std::string attributes_path;
    std::string id_property = "GEOID";
    std::string id_column = "GEOID";
    std::string outcome_column;
    std::vector<std::string> candidate_predictor_columns;
    std::string spearman_column;               ///< optional comparison column
    std::vector<std::string> grouping_features;  ///< optional; default is top-|beta| from the final model
    Contiguity contiguity = Contiguity::queen;
    std::optional<double> snap_tolerance;  ///< unset: 1e-9 of the bounding-box diagonal
    double alpha = 0.05;
    double vif_threshold = 10.0;
    double fdr_alpha = 0.05;
    std::size_t group_k = 5;
    std::size_t top_features_for_grouping = 4;
    double profile_around = 0.25;
    double profile_far = 1.0;
    MergePolicy merge_policy = MergePolicy::drop_with_report;
    bool allow_islands = false;
    std::string output_dir = "out";
    std::filesystem::path base_dir;  ///< relative paths resolve against this

    [[nodiscard]] std::filesystem::path resolve(const std::string& p) const {
        std::filesystem::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    }
};

namespace detail {

inline std::vector<std::string> split_list(std::string_view s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto end = s.find(',', start);
        std::string item = trim(s.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
        if (!item.empty()) out.push_back(std::move(item));
        if (end == std::string_view::npos) break;
        start = end + 1;
    }
    return out;
}

inline double parse_double_value(const std::string& key, const std::string& value) {
    auto v = parse_number(value);
    if (!v) throw InputError("config: '" + key + "' expects a number, got '" + value + "'");
    return *v;
}

inline std::size_t parse_count_value(const std::string& key, const std::string& value) {
    const double v = parse_double_value(key, value);
    if (v < 1.0 || v != std::floor(v)) throw InputError("config: '" + key + "' expects a positive integer");
    return static_cast<std::size_t>(v);
}

inline bool parse_bool_value(const std::string& key, const std::string& value) {
    if (value == "true" || value == "yes" || value == "1") return true;
    if (value == "false" || value == "no" || value == "0") return false;
    throw InputError("config: '" + key + "' expects true or false");
}

}  // namespace detail

/// Sets one configuration key from its text value.
inline void set_config_value(PipelineConfig& c, const std::string& key, const std::string& value) {
    using namespace detail;
    if (key == "geometry_path") c.geometry_path = value;
    else if (key == "attributes_path") c.attributes_path = value;
    else if (key == "id_property") c.id_property = value;
    else if (key == "id_column") c.id_column = value;
    else if (key == "outcome_column") c.outcome_column = value;
    else if (key == "candidate_predictor_columns") c.candidate_predictor_columns = split_list(value);
    else if (key == "spearman_column") c.spearman_column = value;
    else if (key == "grouping_features") c.grouping_features = split_list(value);
    else if (key == "contiguity") {
        if (value == "queen") c.contiguity = Contiguity::queen;
        else if (value == "rook") c.contiguity = Contiguity::rook;
        else throw InputError("config: contiguity must be queen or rook");
    } else if (key == "snap_tolerance") {
        if (value == "auto") c.snap_tolerance.reset();
        else c.snap_tolerance = parse_double_value(key, value);
    } else if (key == "alpha") c.alpha = parse_double_value(key, value);
    else if (key == "vif_threshold") c.vif_threshold = parse_double_value(key, value);
    else if (key == "fdr_alpha") c.fdr_alpha = parse_double_value(key, value);
    else if (key == "group_k") c.group_k = parse_count_value(key, value);
    else if (key == "top_features_for_grouping") c.top_features_for_grouping = parse_count_value(key, value);
    else if (key == "profile_around") c.profile_around = parse_double_value(key, value);
    else if (key == "profile_far") c.profile_far = parse_double_value(key, value);
    else if (key == "merge_policy") {
        if (value == "drop") c.merge_policy = MergePolicy::drop_with_report;
        else if (value == "fail") c.merge_policy = MergePolicy::fail_on_unmatched;
        else throw InputError("config: merge_policy must be drop or fail");
    } else if (key == "allow_islands") c.allow_islands = parse_bool_value(key, value);
    else if (key == "output_dir") c.output_dir = value;
    else throw InputError("config: unknown key '" + key + "'");
}

inline void validate(const PipelineConfig& c) {
    if (c.geometry_path.empty()) throw InputError("config: geometry_path is required");
    if (c.attributes_path.empty()) throw InputError("config: attributes_path is required");
    if (c.outcome_column.empty()) throw InputError("config: outcome_column is required");
    if (c.candidate_predictor_columns.empty()) throw InputError("config: candidate_predictor_columns is empty");
    if (c.output_dir.empty()) throw InputError("config: output_dir is empty");
    if (std::find(c.candidate_predictor_columns.begin(), c.candidate_predictor_columns.end(), c.outcome_column) !=
        c.candidate_predictor_columns.end()) {
        throw InputError("config: outcome column '" + c.outcome_column + "' is listed among the predictors");
    }
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0)) throw InputError(std::string("config: ") + name + " must be positive");
    };
    positive(c.alpha, "alpha");
    positive(c.vif_threshold, "vif_threshold");
    positive(c.fdr_alpha, "fdr_alpha");
    positive(c.profile_around, "profile_around");
    positive(c.profile_far, "profile_far");
    if (c.alpha >= 1.0 || c.fdr_alpha >= 1.0) throw InputError("config: alpha levels must be below 1");
    if (c.snap_tolerance && !(*c.snap_tolerance > 0.0)) throw InputError("config: snap_tolerance must be positive");
    if (c.profile_far < c.profile_around) throw InputError("config: profile_far must be >= profile_around");
}

/// Parses "key = value" lines; '#' starts a comment.
inline PipelineConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {}) {
    PipelineConfig c;
    c.base_dir = base_dir;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string t = detail::trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw InputError("config: line " + std::to_string(lineno) + " has no '='");
        set_config_value(c, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
    }
    return c;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
    return parse_config(read_file(path), path.parent_path());
}

inline Json config_echo(const PipelineConfig& c) {
    auto list = [](const std::vector<std::string>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
        return s;
    };
    Json j;
    j["geometry_path"] = c.geometry_path;
    j["attributes_path"] = c.attributes_path;
    j["id_property"] = c.id_property;
    j["id_column"] = c.id_column;
    j["outcome_column"] = c.outcome_column;
    j["candidate_predictor_columns"] = list(c.candidate_predictor_columns);
    j["spearman_column"] = c.spearman_column;
    j["grouping_features"] = list(c.grouping_features);
    j["contiguity"] = c.contiguity == Contiguity::queen ? "queen" : "rook";
    j["snap_tolerance"] = c.snap_tolerance ? Json(*c.snap_tolerance) : Json("auto");
    j["alpha"] = c.alpha;
    j["vif_threshold"] = c.vif_threshold;
    j["fdr_alpha"] = c.fdr_alpha;
    j["group_k"] = c.group_k;
    j["top_features_for_grouping"] = c.top_features_for_grouping;
    j["profile_around"] = c.profile_around;
    j["profile_far"] = c.profile_far;
    j["merge_policy"] = c.merge_policy == MergePolicy::drop_with_report ? "drop" : "fail";
    j["allow_islands"] = c.allow_islands;
    return j;
}

// ---------------------------------------------------------------------------
// Stage plumbing

struct OutputFile {
    std::string name;
    std::string content;
};

struct StageResult {
    std::string name;
    Json json = Json::object();
    std::string text;
    std::vector<OutputFile> files;
};

template <typename F>
auto run_stage(const std::string& stage, F&& body) -> decltype(body()) {
    try {
        return body();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

namespace detail {

inline std::string fixed(double v, int precision = 4) {
    if (std::isnan(v)) return "NA";
    if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

inline std::string pvalue_text(double p) {
    if (std::isnan(p)) return "NA";
    if (p < 0.001) return "<.001";
    return fixed(p, 3);
}

inline std::string stars(double p) {
    if (std::isnan(p)) return "";
    if (p < 0.001) return "***";
    if (p < 0.01) return "**";
    if (p < 0.05) return "*";
    return "";
}

inline std::string pad(std::string s, std::size_t width) {
    if (s.size() < width) s.append(width - s.size(), ' ');
    return s;
}

inline std::string lpad(std::string s, std::size_t width) {
    if (s.size() < width) s.insert(0, width - s.size(), ' ');
    return s;
}

inline Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json test_json(const TestResult& t) { return Json{{"stat", num(t.stat)}, {"p", num(t.p)}, {"df", t.df}}; }

inline std::string test_line(const std::string& label, const TestResult& t) {
    return "  " + pad(label, 26) + lpad(fixed(t.stat, 4), 12) + "   df " + fixed(t.df, 0) + "   p " + pvalue_text(t.p) + "\n";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Data preparation

struct PreparedData {
    MergedDataset data;
    std::size_t geometry_count = 0;
    std::size_t attribute_count = 0;
    double snap = 0.0;
    AdjacencyList adjacency;
    SpatialWeights model_weights;  ///< row-standardized
    SpatialWeights gi_weights;     ///< binary, self included
    std::vector<std::size_t> islands;
    std::vector<std::string> analysis_columns;

    [[nodiscard]] Eigen::VectorXd column(const std::string& name) const { return data.table.column(name); }
};

inline PreparedData prepare(const PipelineConfig& cfg) {
    validate(cfg);
    PreparedData p;
    run_stage("ingest", [&] {
        auto units = parse_geometry(read_file(cfg.resolve(cfg.geometry_path)), cfg.id_property);
        auto table = parse_attributes(read_file(cfg.resolve(cfg.attributes_path)), cfg.id_column);
        p.geometry_count = units.size();
        p.attribute_count = table.rows();
        p.analysis_columns.push_back(cfg.outcome_column);
        for (const auto& c : cfg.candidate_predictor_columns) p.analysis_columns.push_back(c);
        if (!cfg.spearman_column.empty() &&
            std::find(p.analysis_columns.begin(), p.analysis_columns.end(), cfg.spearman_column) == p.analysis_columns.end()) {
            p.analysis_columns.push_back(cfg.spearman_column);
        }
        for (const auto& c : cfg.grouping_features) {
            if (std::find(p.analysis_columns.begin(), p.analysis_columns.end(), c) == p.analysis_columns.end()) {
                p.analysis_columns.push_back(c);
            }
        }
        p.data = drop_incomplete(merge(units, table, cfg.merge_policy), p.analysis_columns);
        if (p.data.size() < 3) throw InputError("fewer than 3 complete units remain after merging");
        return 0;
    });
    run_stage("weights", [&] {
        p.snap = cfg.snap_tolerance.value_or(default_snap_tolerance(p.data.units));
        p.adjacency = cfg.contiguity == Contiguity::queen ? queen_contiguity(p.data.units, p.snap)
                                                          : rook_contiguity(p.data.units, p.snap);
        p.model_weights = to_weights(p.adjacency, WeightMode::row_standardized, false);
        p.gi_weights = to_weights(p.adjacency, WeightMode::binary, true);
        p.islands = detect_islands(p.adjacency);
        return 0;
    });
    return p;
}

// ---------------------------------------------------------------------------
// Stages

inline StageResult data_stage(const PipelineConfig& cfg, const PreparedData& prep) {
    return run_stage("summary", [&] {
        StageResult r{"data"};
        AttributeTable analysis;
        analysis.ids = prep.data.table.ids;
        analysis.columns = prep.analysis_columns;
        analysis.values.resize(static_cast<Eigen::Index>(prep.data.size()), static_cast<Eigen::Index>(analysis.columns.size()));
        for (std::size_t j = 0; j < analysis.columns.size(); ++j) {
            analysis.values.col(static_cast<Eigen::Index>(j)) = prep.column(analysis.columns[j]);
        }
        const auto rows = summarize(analysis);

        std::string summary_csv = "variable,mean,sd,n\n";
        Json summary = Json::array();
        r.text = "== Data ==\n";
        r.text += "Geometry units: " + std::to_string(prep.geometry_count) + "   attribute rows: " +
                  std::to_string(prep.attribute_count) + "   retained: " + std::to_string(prep.data.size()) + "\n";
        r.text += "Summary (mean (SD))\n";
        for (const auto& s : rows) {
            summary_csv += s.name + "," + format_sig6(s.mean) + "," + format_sig6(s.sd) + "," + std::to_string(s.n) + "\n";
            summary.push_back({{"variable", s.name}, {"mean", detail::num(s.mean)}, {"sd", detail::num(s.sd)}, {"n", s.n}});
            r.text += "  " + detail::pad(s.name, 26) + detail::lpad(format_sig6(s.mean), 12) + " (" + format_sig6(s.sd) + ")\n";
        }
        std::string dropped_csv = "id,reason\n";
        Json dropped = Json::array();
        r.text += "Dropped units: " + std::to_string(prep.data.dropped.size()) + "\n";
        for (const auto& d : prep.data.dropped) {
            dropped_csv += d.id + "," + d.reason + "\n";
            dropped.push_back({{"id", d.id}, {"reason", d.reason}});
            r.text += "  " + d.id + "  " + d.reason + "\n";
        }
        (void)cfg;
        r.json = {{"geometry_units", prep.geometry_count},
                  {"attribute_rows", prep.attribute_count},
                  {"retained_units", prep.data.size()},
                  {"dropped", dropped},
                  {"summary", summary}};
        r.files = {{"summary.csv", summary_csv}, {"dropped.csv", dropped_csv}};
        return r;
    });
}

inline StageResult weights_stage(const PipelineConfig& cfg, const PreparedData& prep) {
    return run_stage("weights", [&] {
        StageResult r{"weights"};
        std::size_t min_deg = prep.adjacency.n, max_deg = 0, total = 0;
        for (std::size_t i = 0; i < prep.adjacency.n; ++i) {
            min_deg = std::min(min_deg, prep.adjacency.degree(i));
            max_deg = std::max(max_deg, prep.adjacency.degree(i));
            total += prep.adjacency.degree(i);
        }
        const double mean_deg = static_cast<double>(total) / static_cast<double>(prep.adjacency.n);
        Json islands = Json::array();
        std::string islands_txt;
        for (auto i : prep.islands) {
            islands.push_back(prep.data.units[i].id);
            islands_txt += std::to_string(i) + " " + prep.data.units[i].id + "\n";
        }
        if (prep.islands.empty()) islands_txt = "none\n";
        const std::string kind = cfg.contiguity == Contiguity::queen ? "queen" : "rook";
        r.json = {{"contiguity", kind},
                  {"snap_tolerance", prep.snap},
                  {"units", prep.adjacency.n},
                  {"links", prep.adjacency.edge_count()},
                  {"min_neighbors", min_deg},
                  {"mean_neighbors", mean_deg},
                  {"max_neighbors", max_deg},
                  {"islands", islands}};
        r.text = "== Weights ==\n";
        r.text += "First-order " + kind + " contiguity, snap tolerance " + format_sig6(prep.snap) + "\n";
        r.text += "Units " + std::to_string(prep.adjacency.n) + ", links " + std::to_string(prep.adjacency.edge_count()) +
                  ", neighbors min/mean/max " + std::to_string(min_deg) + "/" + detail::fixed(mean_deg, 2) + "/" +
                  std::to_string(max_deg) + "\n";
        r.text += "Islands: " + (prep.islands.empty() ? std::string("none") : std::to_string(prep.islands.size())) + "\n";
        r.files = {{"spatial_weights.txt", write_weights(prep.model_weights)}, {"islands.txt", islands_txt}};
        return r;
    });
}

struct HotspotOutcome {
    StageResult stage;
    HotspotResult result;
};

inline HotspotOutcome hotspot_stage(const PipelineConfig& cfg, const PreparedData& prep) {
    return run_stage("hotspot", [&] {
        HotspotOutcome out{StageResult{"hotspot"}, {}};
        const Eigen::VectorXd x = prep.column(cfg.outcome_column);
        out.result = gi_star(prep.gi_weights, x, cfg.fdr_alpha);
        const auto& h = out.result;

        std::string csv = "id,x,z,p,adjusted_p,class\n";
        std::map<std::string, std::size_t> counts;
        for (auto c : kHotspotClasses) counts[std::string(to_string(c))] = 0;
        for (std::size_t i = 0; i < prep.data.size(); ++i) {
            const auto k = static_cast<Eigen::Index>(i);
            csv += prep.data.units[i].id + "," + format_sig6(x(k)) + "," + format_sig6(h.z(k)) + "," + format_sig6(h.p(k)) +
                   "," + format_sig6(h.adjusted_p(k)) + "," + std::string(to_string(h.classes[i])) + "\n";
            ++counts[std::string(to_string(h.classes[i]))];
        }
        Json jc = Json::object();
        out.stage.text = "== Hot spots (Getis-Ord Gi*) ==\n";
        out.stage.text += "Variable " + cfg.outcome_column + ", binary contiguity with self, BH FDR alpha " +
                          format_sig6(cfg.fdr_alpha) + "\n";
        for (auto c : kHotspotClasses) {
            const std::string name(to_string(c));
            jc[name] = counts[name];
            out.stage.text += "  " + detail::pad(name, 8) + std::to_string(counts[name]) + "\n";
        }
        out.stage.json = {{"variable", cfg.outcome_column},
                          {"fdr_alpha", cfg.fdr_alpha},
                          {"max_z", h.z.maxCoeff()},
                          {"min_z", h.z.minCoeff()},
                          {"class_counts", jc}};
        std::vector<double> xs(x.data(), x.data() + x.size());
        out.stage.files = {
            {"hotspots.csv", csv},
            {"outcome_map.svg", render_choropleth(prep.data.units, xs, cfg.outcome_column + " (quantiles)")},
            {"hotspot_map.svg", render_hotspots(prep.data.units, h.classes, "Gi* hot and cold spots: " + cfg.outcome_column)}};
        return out;
    });
}

struct RegressionOutcome {
    StageResult stage;
    OlsFit final_fit;
    std::vector<std::string> top_features;  ///< by |beta| descending
    ModelDecision decision;
    std::optional<SpatialFit> spatial;
};

namespace detail {

inline std::string coefficient_table(const std::vector<std::string>& names, const Eigen::VectorXd& beta,
                                     const Eigen::VectorXd& se, const Eigen::VectorXd& stat, const Eigen::VectorXd& p,
                                     const char* stat_label) {
    std::string t = "  " + pad("variable", 22) + lpad("coef", 11) + lpad("se", 11) + lpad(stat_label, 10) + lpad("p", 8) + "\n";
    for (Eigen::Index k = 0; k < beta.size(); ++k) {
        t += "  " + pad(names[static_cast<std::size_t>(k)], 22) + lpad(fixed(beta(k)), 11) + lpad(fixed(se(k)), 11) +
             lpad(fixed(stat(k), 3), 10) + lpad(pvalue_text(p(k)), 8) + (stars(p(k)).empty() ? "" : " " + stars(p(k))) + "\n";
    }
    return t;
}

inline std::string coefficient_csv(const std::vector<std::string>& names, const Eigen::VectorXd& beta,
                                   const Eigen::VectorXd& se, const Eigen::VectorXd& stat, const Eigen::VectorXd& p,
                                   const char* stat_label) {
    std::string csv = std::string("variable,coef,se,") + stat_label + ",p,significance\n";
    for (Eigen::Index k = 0; k < beta.size(); ++k) {
        csv += names[static_cast<std::size_t>(k)] + "," + format_sig6(beta(k)) + "," + format_sig6(se(k)) + "," +
               format_sig6(stat(k)) + "," + format_sig6(p(k)) + "," + stars(p(k)) + "\n";
    }
    return csv;
}

inline Json coefficient_json(const std::vector<std::string>& names, const Eigen::VectorXd& beta, const Eigen::VectorXd& se,
                             const Eigen::VectorXd& stat, const Eigen::VectorXd& p, const char* stat_label) {
    Json rows = Json::array();
    for (Eigen::Index k = 0; k < beta.size(); ++k) {
        rows.push_back({{"variable", names[static_cast<std::size_t>(k)]},
                        {"coef", num(beta(k))},
                        {"se", num(se(k))},
                        {stat_label, num(stat(k))},
                        {"p", num(p(k))},
                        {"significance", stars(p(k))}});
    }
    return rows;
}

}  // namespace detail

inline RegressionOutcome regression_stage(const PipelineConfig& cfg, const PreparedData& prep) {
    RegressionOutcome out{StageResult{"regression"}, {}, {}, {}, std::nullopt};
    auto& st = out.stage;
    Json selection = Json::object();
    std::string selection_csv = "step,action,column,value\n";

    const auto& names = cfg.candidate_predictor_columns;
    Eigen::VectorXd y;
    DesignMatrix design;
    run_stage("standardize", [&] {
        y = zscore(prep.column(cfg.outcome_column));
        Eigen::MatrixXd z(static_cast<Eigen::Index>(prep.data.size()), static_cast<Eigen::Index>(names.size()));
        for (std::size_t j = 0; j < names.size(); ++j) {
            try {
                z.col(static_cast<Eigen::Index>(j)) = zscore(prep.column(names[j]));
            } catch (const InputError& e) {
                throw InputError("column '" + names[j] + "': " + e.what());
            }
        }
        design = make_design(z, names);
        return 0;
    });

    st.text = "== Regression ==\n";
    st.text += "Outcome " + cfg.outcome_column + " (all columns standardized to mean 0, SD 1), n = " +
               std::to_string(prep.data.size()) + "\n";
    st.text += "Selection\n";

    DesignMatrix d1 = run_stage("vif_prune", [&] {
        VifPruneResult vp;
        if (design.cols() >= 3) {
            vp = vif_prune(design, cfg.vif_threshold);
        } else {
            for (std::size_t c = 0; c < static_cast<std::size_t>(design.cols()); ++c) vp.retained.push_back(c);
        }
        Json removed = Json::array();
        for (const auto& rm : vp.removed) {
            removed.push_back({{"column", rm.name}, {"vif", detail::num(rm.value)}});
            selection_csv += "vif,remove," + rm.name + "," + format_sig6(rm.value) + "\n";
            st.text += "  VIF > " + format_sig6(cfg.vif_threshold) + ": removed " + rm.name + " (VIF " + detail::fixed(rm.value, 2) + ")\n";
        }
        if (vp.removed.empty()) st.text += "  VIF: no column above " + format_sig6(cfg.vif_threshold) + "\n";
        selection["vif_threshold"] = cfg.vif_threshold;
        selection["vif_removed"] = removed;
        return design.select(vp.retained);
    });

    DesignMatrix d2 = run_stage("stepwise_aic", [&] {
        const auto sw = stepwise_aic(d1, y);
        Json trace = Json::array();
        for (std::size_t k = 0; k < sw.trace.size(); ++k) {
            const auto& s = sw.trace[k];
            trace.push_back({{"action", s.action}, {"column", s.column}, {"aic", s.aic}});
            selection_csv += "stepwise," + s.action + "," + s.column + "," + format_sig6(s.aic) + "\n";
            st.text += "  stepwise AIC: " + s.action + (s.column.empty() ? "" : " " + s.column) + " -> AIC " +
                       detail::fixed(s.aic, 2) + "\n";
        }
        selection["stepwise_trace"] = trace;
        return d1.select(sw.selected);
    });

    SignificancePruneResult pruned = run_stage("significance_prune", [&] {
        auto sp = significance_prune(d2, y, cfg.alpha);
        Json removed = Json::array();
        for (const auto& rm : sp.removed) {
            removed.push_back({{"column", rm.name}, {"p", detail::num(rm.value)}});
            selection_csv += "significance,remove," + rm.name + "," + format_sig6(rm.value) + "\n";
            st.text += "  p >= " + format_sig6(cfg.alpha) + ": removed " + rm.name + " (p " + detail::fixed(rm.value, 3) + ")\n";
        }
        selection["significance_removed"] = removed;
        return sp;
    });
    const DesignMatrix final_design = d2.select(pruned.retained);
    out.final_fit = pruned.fit;
    const OlsFit& f = out.final_fit;

    st.text += "Final OLS\n";
    st.text += detail::coefficient_table(f.names, f.beta, f.se, f.t, f.p, "t");
    st.text += "  R2 " + detail::fixed(f.r2) + "   adj R2 " + detail::fixed(f.adj_r2) + "   log-likelihood " +
               detail::fixed(f.log_likelihood, 3) + "   AIC " + detail::fixed(f.aic, 2) + "\n";
    Json ols_json = {{"coefficients", detail::coefficient_json(f.names, f.beta, f.se, f.t, f.p, "t")},
                     {"n", f.n},
                     {"r2", f.r2},
                     {"adj_r2", f.adj_r2},
                     {"sigma2", f.sigma2},
                     {"log_likelihood", f.log_likelihood},
                     {"aic", f.aic}};
    st.files.push_back({"ols_coefficients.csv", detail::coefficient_csv(f.names, f.beta, f.se, f.t, f.p, "t")});

    Json diagnostics = run_stage("diagnostics", [&] {
        const double cond = condition_number(final_design);
        const auto jb = jarque_bera(f.residuals);
        const auto kb = koenker_bassett(final_design, f.residuals);
        st.text += "Diagnostics\n";
        st.text += "  " + detail::pad("condition number", 26) + detail::lpad(detail::fixed(cond, 4), 12) + "\n";
        st.text += detail::test_line("Jarque-Bera", jb);
        st.text += detail::test_line("Koenker-Bassett", kb);
        return Json{{"condition_number", detail::num(cond)},
                    {"jarque_bera", detail::test_json(jb)},
                    {"koenker_bassett", detail::test_json(kb)}};
    });

    Json lm_json = nullptr;
    Json decision_json = nullptr;
    Json spatial_json = nullptr;
    Json comparison_json = nullptr;
    if (!prep.islands.empty()) {
        if (!cfg.allow_islands) {
            std::string ids;
            for (auto i : prep.islands) ids += " " + prep.data.units[i].id;
            throw StageError("lm_tests", "weights contain " + std::to_string(prep.islands.size()) +
                                             " island unit(s):" + ids +
                                             "; fix the geometry or set allow_islands = true to skip spatial models");
        }
        st.text += "Spatial dependence: skipped (island units present, allow_islands = true)\n";
        decision_json = {{"choice", "skipped"}, {"reason", "island units present"}};
    } else {
        const LmSuite lm = run_stage("lm_tests", [&] { return lm_tests(final_design, y, f, prep.model_weights); });
        st.text += "Spatial dependence (row-standardized contiguity weights)\n";
        st.text += detail::test_line("LM-lag", lm.lm_lag);
        st.text += detail::test_line("Robust LM-lag", lm.robust_lm_lag);
        st.text += detail::test_line("LM-error", lm.lm_error);
        st.text += detail::test_line("Robust LM-error", lm.robust_lm_error);
        lm_json = {{"lm_lag", detail::test_json(lm.lm_lag)},
                   {"robust_lm_lag", detail::test_json(lm.robust_lm_lag)},
                   {"lm_error", detail::test_json(lm.lm_error)},
                   {"robust_lm_error", detail::test_json(lm.robust_lm_error)},
                   {"degenerate", lm.degenerate}};
        out.decision = model_decision(lm, cfg.alpha);
        st.text += "Decision: " + std::string(to_string(out.decision.choice)) + " (" + out.decision.reason + ")" +
                   (out.decision.warning ? " [warning]" : "") + "\n";
        decision_json = {{"choice", to_string(out.decision.choice)},
                         {"reason", out.decision.reason},
                         {"warning", out.decision.warning}};

        if (out.decision.choice == ModelChoice::fit_error || out.decision.choice == ModelChoice::fit_lag) {
            const bool is_error = out.decision.choice == ModelChoice::fit_error;
            out.spatial = run_stage(is_error ? "fit_error_ml" : "fit_lag_ml", [&] {
                const auto cache = spectral_cache(prep.model_weights);
                return is_error ? fit_error_ml(final_design, y, prep.model_weights, cache)
                                : fit_lag_ml(final_design, y, prep.model_weights, cache);
            });
            const auto& s = *out.spatial;
            const char* pname = is_error ? "lambda" : "rho";
            std::vector<std::string> sn = s.names;
            sn.emplace_back(pname);
            Eigen::VectorXd b(s.beta.size() + 1), se(s.beta.size() + 1), z(s.beta.size() + 1), p(s.beta.size() + 1);
            b << s.beta, s.param;
            se << s.se, s.param_se;
            z << s.z, s.param_z;
            p << s.p, s.param_p;
            st.text += std::string(is_error ? "Spatial error model" : "Spatial lag model") + " (maximum likelihood)\n";
            st.text += detail::coefficient_table(sn, b, se, z, p, "z");
            if (!s.se_available) st.text += "  standard errors unavailable: Hessian not negative definite\n";
            st.text += "  pseudo R2 " + detail::fixed(s.pseudo_r2) + "   log-likelihood " + detail::fixed(s.log_likelihood, 3) +
                       "   AIC " + detail::fixed(s.aic, 2) + "   sigma2 " + detail::fixed(s.sigma2) + "\n";
            spatial_json = {{"model", is_error ? "error" : "lag"},
                            {"coefficients", detail::coefficient_json(sn, b, se, z, p, "z")},
                            {"parameter", pname},
                            {"parameter_interval", Json::array({s.lower, s.upper})},
                            {"sigma2", s.sigma2},
                            {"log_likelihood", s.log_likelihood},
                            {"aic", s.aic},
                            {"pseudo_r2", s.pseudo_r2},
                            {"se_available", s.se_available}};
            st.files.push_back({"spatial_coefficients.csv", detail::coefficient_csv(sn, b, se, z, p, "z")});

            const auto cmp = compare(f, s);
            std::string cmp_csv = "model,measure,value,aic,parameters,preferred\n";
            Json rows = Json::array();
            st.text += "Model comparison\n";
            for (const auto& row : cmp.rows) {
                const bool pref = row.model == cmp.preferred;
                cmp_csv += row.model + "," + row.measure_name + "," + format_sig6(row.measure) + "," + format_sig6(row.aic) +
                           "," + std::to_string(row.parameters) + "," + (pref ? "yes" : "no") + "\n";
                rows.push_back({{"model", row.model},
                                {"measure", row.measure_name},
                                {"value", row.measure},
                                {"aic", row.aic},
                                {"parameters", row.parameters}});
                st.text += "  " + detail::pad(row.model, 16) + detail::pad(row.measure_name, 10) +
                           detail::lpad(detail::fixed(row.measure), 9) + "   AIC " + detail::lpad(detail::fixed(row.aic, 2), 10) +
                           (pref ? "   preferred" : "") + "\n";
            }
            st.text += "  note: " + cmp.note + "\n";
            comparison_json = {{"rows", rows}, {"preferred", cmp.preferred}, {"note", cmp.note}};
            st.files.push_back({"comparison.csv", cmp_csv});
        }
    }

    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t k = 1; k < f.names.size(); ++k) ranked.emplace_back(-std::fabs(f.beta(static_cast<Eigen::Index>(k))), k);
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    Json top = Json::array();
    for (const auto& [neg, k] : ranked) {
        out.top_features.push_back(f.names[k]);
        top.push_back(f.names[k]);
    }

    st.json = {{"outcome", cfg.outcome_column},
               {"n", prep.data.size()},
               {"selection", selection},
               {"ols", ols_json},
               {"diagnostics", diagnostics},
               {"lm_tests", lm_json},
               {"decision", decision_json},
               {"spatial_model", spatial_json},
               {"comparison", comparison_json},
               {"features_by_abs_coef", top}};
    st.files.insert(st.files.begin(), OutputFile{"selection.csv", selection_csv});
    return out;
}

/// Grouping features: the configured list, else the top-|beta| features of
/// the final regression model.
inline std::vector<std::string> grouping_features(const PipelineConfig& cfg, const std::vector<std::string>& ranked) {
    if (!cfg.grouping_features.empty()) return cfg.grouping_features;
    std::vector<std::string> out(ranked.begin(),
                                 ranked.begin() + static_cast<std::ptrdiff_t>(std::min(ranked.size(), cfg.top_features_for_grouping)));
    return out;
}

struct GroupingOutcome {
    StageResult stage;
    std::vector<int> assignments;
};

inline GroupingOutcome grouping_stage(const PipelineConfig& cfg, const PreparedData& prep,
                                      const std::vector<std::string>& features) {
    return run_stage("cluster", [&] {
        if (features.empty()) throw InputError("no grouping features: the final model retained no predictors");
        if (cfg.group_k > prep.data.size()) throw InputError("group_k exceeds the number of units");
        const auto n = static_cast<Eigen::Index>(prep.data.size());
        Eigen::MatrixXd z(n, static_cast<Eigen::Index>(features.size()));
        for (std::size_t j = 0; j < features.size(); ++j) z.col(static_cast<Eigen::Index>(j)) = zscore(prep.column(features[j]));
        const auto dg = ward_cluster(z);
        GroupingOutcome out{StageResult{"grouping"}, cut(dg, cfg.group_k)};

        std::vector<std::string> profiled = features;
        Eigen::MatrixXd pz(n, z.cols() + 1);
        pz.leftCols(z.cols()) = z;
        pz.col(z.cols()) = zscore(prep.column(cfg.outcome_column));
        profiled.push_back(cfg.outcome_column);
        const auto profiles =
            profile(out.assignments, pz, profiled, ProfileThresholds{cfg.profile_around, cfg.profile_far});

        std::string groups_csv = "group,count";
        for (const auto& name : profiled) groups_csv += "," + name + "_mean," + name + "_label";
        groups_csv += "\n";
        Json groups = Json::array();
        auto& text = out.stage.text;
        text = "== Grouping (Ward, ward.D2 heights) ==\n";
        text += "Features:";
        for (const auto& name : features) text += " " + name;
        text += "\nProfiled outcome: " + cfg.outcome_column + " (not clustered)\n";
        text += "Groups: " + std::to_string(cfg.group_k) + ", within-group SS " +
                detail::fixed(within_group_ss(out.assignments, z), 4) + "\n";
        for (const auto& gp : profiles) {
            groups_csv += std::to_string(gp.group) + "," + std::to_string(gp.count);
            Json means = Json::object();
            text += "  Group " + std::to_string(gp.group) + " (" + std::to_string(gp.count) + " units)\n";
            for (std::size_t j = 0; j < profiled.size(); ++j) {
                const std::string label(to_string(gp.labels[j]));
                groups_csv += "," + format_sig6(gp.means[j]) + "," + label;
                means[profiled[j]] = {{"mean", gp.means[j]}, {"label", label}};
                text += "    " + detail::pad(profiled[j], 24) + detail::lpad(detail::fixed(gp.means[j], 3), 8) + "  " + label + "\n";
            }
            groups_csv += "\n";
            groups.push_back({{"group", gp.group}, {"count", gp.count}, {"features", means}});
        }
        std::string assign_csv = "id,group\n";
        for (std::size_t i = 0; i < prep.data.size(); ++i) {
            assign_csv += prep.data.units[i].id + "," + std::to_string(out.assignments[i]) + "\n";
        }
        Json heights = Json::array();
        const std::size_t m = dg.merges.size();
        for (std::size_t k = m - std::min<std::size_t>(m, cfg.group_k); k < m; ++k) heights.push_back(dg.merges[k].height);
        out.stage.json = {{"method", "ward.D2"},
                          {"features", features},
                          {"profiled", profiled},
                          {"k", cfg.group_k},
                          {"final_merge_heights", heights},
                          {"thresholds", {{"around", cfg.profile_around}, {"far", cfg.profile_far}}},
                          {"groups", groups}};
        out.stage.files = {{"groups.csv", groups_csv},
                           {"assignments.csv", assign_csv},
                           {"groups_map.svg", render_groups(prep.data.units, out.assignments, "Ward groups (k = " +
                                                                                                  std::to_string(cfg.group_k) + ")")}};
        return out;
    });
}

inline StageResult spearman_stage(const PipelineConfig& cfg, const PreparedData& prep, const std::vector<std::string>& features) {
    return run_stage("spearman", [&] {
        StageResult r{"spearman"};
        if (cfg.spearman_column.empty()) {
            r.json = {{"skipped", "no spearman_column configured"}};
            r.text = "== Spearman ==\nSkipped: no spearman_column configured\n";
            return r;
        }
        std::vector<std::string> targets{cfg.outcome_column};
        for (const auto& f : features) {
            if (f != cfg.spearman_column && f != cfg.outcome_column) targets.push_back(f);
        }
        const Eigen::VectorXd base = prep.column(cfg.spearman_column);
        std::string csv = "variable,rho,p,n\n";
        Json rows = Json::array();
        r.text = "== Spearman rank correlation with " + cfg.spearman_column + " ==\n";
        for (const auto& t : targets) {
            const auto s = spearman(base, prep.column(t));
            csv += t + "," + format_sig6(s.rho) + "," + format_sig6(s.p) + "," + std::to_string(s.n) + "\n";
            rows.push_back({{"variable", t}, {"rho", s.rho}, {"p", s.p}, {"n", s.n}});
            r.text += "  " + detail::pad(t, 26) + detail::lpad(detail::fixed(s.rho, 3), 8) + "  p " + detail::pvalue_text(s.p) +
                      " " + detail::stars(s.p) + "\n";
        }
        r.json = {{"column", cfg.spearman_column}, {"rows", rows}};
        std::vector<double> xs(base.data(), base.data() + base.size());
        r.files = {{"spearman.csv", csv},
                   {"spearman_map.svg", render_choropleth(prep.data.units, xs, cfg.spearman_column + " (quantiles)")}};
        return r;
    });
}

// ---------------------------------------------------------------------------
// Output

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + path.string() + "'");
    out << content;
    if (!out) throw InputError("failed writing '" + path.string() + "'");
}

/// Writes the stage's tables plus "<name>.json" and "<name>.txt" sections.
inline void write_stage(const std::filesystem::path& dir, const StageResult& s) {
    for (const auto& f : s.files) write_text_file(dir / f.name, f.content);
    write_text_file(dir / (s.name + ".json"), s.json.dump(2) + "\n");
    write_text_file(dir / (s.name + ".txt"), s.text);
}

inline std::filesystem::path output_dir(const PipelineConfig& cfg) {
    auto dir = cfg.resolve(cfg.output_dir);
    std::filesystem::create_directories(dir);
    return dir;
}

struct PipelineReport {
    Json json;
    std::string text;
    std::vector<StageResult> stages;
};

/// Full run; writes every stage's outputs, the report and augmented geometry.
inline PipelineReport run_pipeline(const PipelineConfig& cfg) {
    const PreparedData prep = prepare(cfg);
    PipelineReport rep;
    rep.stages.push_back(data_stage(cfg, prep));
    rep.stages.push_back(weights_stage(cfg, prep));
    auto hot = hotspot_stage(cfg, prep);
    rep.stages.push_back(hot.stage);
    auto reg = regression_stage(cfg, prep);
    rep.stages.push_back(reg.stage);
    const auto features = grouping_features(cfg, reg.top_features);
    auto grp = grouping_stage(cfg, prep, features);
    rep.stages.push_back(grp.stage);
    rep.stages.push_back(spearman_stage(cfg, prep, features));

    rep.json["tool"] = {{"name", kToolName}, {"version", kToolVersion}};
    rep.json["config"] = config_echo(cfg);
    rep.text = std::string(kToolName) + " " + std::string(kToolVersion) + " analysis report\n\n== Configuration ==\n";
    for (const auto& [key, val] : rep.json["config"].items()) {
        rep.text += "  " + key + " = " + (val.is_string() ? val.get<std::string>() : val.dump()) + "\n";
    }
    for (const auto& s : rep.stages) {
        rep.json[s.name] = s.json;
        rep.text += "\n" + s.text;
    }

    const auto dir = output_dir(cfg);
    for (const auto& s : rep.stages) write_stage(dir, s);
    std::vector<Json> extra;
    for (std::size_t i = 0; i < prep.data.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        extra.push_back({{"gi_z", hot.result.z(k)},
                         {"gi_p", hot.result.p(k)},
                         {"gi_adjusted_p", hot.result.adjusted_p(k)},
                         {"hotspot_class", to_string(hot.result.classes[i])},
                         {"group", grp.assignments[i]}});
    }
    write_text_file(dir / "augmented.geojson", to_feature_collection(prep.data.units, &extra).dump() + "\n");
    write_text_file(dir / "report.json", rep.json.dump(2) + "\n");
    write_text_file(dir / "report.txt", rep.text);
    return rep;
}

inline StageResult run_weights_command(const PipelineConfig& cfg) {
    const auto prep = prepare(cfg);
    auto s = weights_stage(cfg, prep);
    write_stage(output_dir(cfg), s);
    return s;
}

inline StageResult run_hotspot_command(const PipelineConfig& cfg) {
    const auto prep = prepare(cfg);
    auto s = hotspot_stage(cfg, prep).stage;
    write_stage(output_dir(cfg), s);
    return s;
}

inline StageResult run_regress_command(const PipelineConfig& cfg) {
    const auto prep = prepare(cfg);
    auto s = regression_stage(cfg, prep).stage;
    write_stage(output_dir(cfg), s);
    return s;
}

/// Grouping only. Without configured grouping features the regression
/// selection runs in memory to rank them; none of its outputs are written.
inline StageResult run_cluster_command(const PipelineConfig& cfg) {
    const auto prep = prepare(cfg);
    std::vector<std::string> ranked;
    if (cfg.grouping_features.empty()) ranked = regression_stage(cfg, prep).top_features;
    auto s = grouping_stage(cfg, prep, grouping_features(cfg, ranked)).stage;
    write_stage(output_dir(cfg), s);
    return s;
}

}  // namespace tractscope
