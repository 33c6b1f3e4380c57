// Command-line front end: pipeline, weights, hotspot, regress and cluster
// subcommands sharing one configuration file plus per-key overrides.

#include <cstdio>
#include <exception>
#include <functional>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "tractscope/pipeline.hpp"

namespace {

struct Options {
    std::string config_path;
    std::map<std::string, std::string> overrides;
};

void add_common(CLI::App* cmd, Options& opt) {
    cmd->add_option("-c,--config", opt.config_path, "configuration file (key = value lines)")->required();
    static const char* keys[] = {"geometry_path",
                                 "attributes_path",
                                 "id_property",
                                 "id_column",
                                 "outcome_column",
                                 "candidate_predictor_columns",
                                 "spearman_column",
                                 "grouping_features",
                                 "contiguity",
                                 "snap_tolerance",
                                 "alpha",
                                 "vif_threshold",
                                 "fdr_alpha",
                                 "group_k",
                                 "top_features_for_grouping",
                                 "profile_around",
                                 "profile_far",
                                 "merge_policy",
                                 "allow_islands",
                                 "output_dir"};
    for (const char* key : keys) {
        std::string flag = std::string("--") + key;
        for (auto& ch : flag) {
            if (ch == '_') ch = '-';
        }
        cmd->add_option_function<std::string>(
            flag, [&opt, key](const std::string& v) { opt.overrides[key] = v; }, std::string("override ") + key);
    }
}

tractscope::PipelineConfig load(const Options& opt) {
    auto cfg = tractscope::run_stage("config", [&] {
        auto c = tractscope::load_config(opt.config_path);
        for (const auto& [k, v] : opt.overrides) {
            tractscope::set_config_value(c, k, v);
            if (k == "geometry_path" || k == "attributes_path" || k == "output_dir") {
                // paths given on the command line are relative to the working directory
                auto& field = k == "geometry_path" ? c.geometry_path : k == "attributes_path" ? c.attributes_path : c.output_dir;
                field = std::filesystem::absolute(v).string();
            }
        }
        tractscope::validate(c);
        return c;
    });
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tractscope: spatial analysis of areal health-outcome data"};
    app.set_version_flag("--version", std::string(tractscope::kToolName) + " " + std::string(tractscope::kToolVersion));
    app.require_subcommand(1);

    Options opt;
    std::function<void()> action;
    auto report = [](const tractscope::StageResult& s) { std::fputs(s.text.c_str(), stdout); };

    auto* pipeline = app.add_subcommand("pipeline", "run every stage and write the full report");
    add_common(pipeline, opt);
    pipeline->callback([&] {
        action = [&] {
            const auto rep = tractscope::run_pipeline(load(opt));
            std::fputs(rep.text.c_str(), stdout);
        };
    });

    auto* weights = app.add_subcommand("weights", "build contiguity weights and report islands");
    add_common(weights, opt);
    weights->callback([&] { action = [&] { report(tractscope::run_weights_command(load(opt))); }; });

    auto* hotspot = app.add_subcommand("hotspot", "Getis-Ord Gi* hot and cold spots of the outcome");
    add_common(hotspot, opt);
    hotspot->callback([&] { action = [&] { report(tractscope::run_hotspot_command(load(opt))); }; });

    auto* regress = app.add_subcommand("regress", "model selection, diagnostics, LM tests and spatial fit");
    add_common(regress, opt);
    regress->callback([&] { action = [&] { report(tractscope::run_regress_command(load(opt))); }; });

    auto* cluster = app.add_subcommand("cluster", "Ward grouping of tracts and group profiles");
    add_common(cluster, opt);
    cluster->callback([&] { action = [&] { report(tractscope::run_cluster_command(load(opt))); }; });

    CLI11_PARSE(app, argc, argv);
    try {
        action();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
