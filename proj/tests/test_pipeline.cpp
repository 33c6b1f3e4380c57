#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "support.hpp"
#include "tractscope/pipeline.hpp"

using namespace tractscope;
namespace ts = testing_support;
namespace fs = std::filesystem;

namespace {

const fs::path kCounty = fs::path(TRACTSCOPE_SOURCE_DIR) / "data" / "synthetic_county";

struct CliRun {
    int status = -1;
    std::string out;
    std::string err;
};

CliRun run_cli(const std::string& args, const fs::path& scratch) {
    const auto out = scratch / "stdout.txt";
    const auto err = scratch / "stderr.txt";
    const std::string cmd = std::string(TRACTSCOPE_CLI) + " " + args + " > " + out.string() + " 2> " + err.string();
    const int raw = std::system(cmd.c_str());
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, ts::slurp(out), ts::slurp(err)};
}

std::string county_args(const std::string& subcommand, const fs::path& out) {
    return subcommand + " --config " + (kCounty / "county.cfg").string() + " --output-dir " + out.string();
}

// Small lattice dataset with a configurable outcome column.
fs::path write_grid_dataset(const std::string& name, std::size_t rows, std::size_t cols, const std::vector<double>& outcome) {
    const auto dir = ts::scratch_dir(name);
    auto units = ts::grid(rows, cols);
    for (auto& u : units) u.properties["GEOID"] = u.id;
    ts::spit(dir / "tracts.geojson", to_feature_collection(units).dump());
    NormalSource rng(257);
    std::string csv = "GEOID,y,x1,x2\n";
    for (std::size_t i = 0; i < units.size(); ++i) {
        csv += units[i].id + "," + format_sig6(outcome[i]) + "," + format_sig6(rng.normal()) + "," +
               format_sig6(rng.normal()) + "\n";
    }
    ts::spit(dir / "attributes.csv", csv);
    ts::spit(dir / "study.cfg",
             "geometry_path = tracts.geojson\nattributes_path = attributes.csv\noutcome_column = y\n"
             "candidate_predictor_columns = x1, x2\noutput_dir = out\n");
    return dir;
}

}  // namespace

TEST(Config, ParsesKeysListsAndComments) {
    const auto c = parse_config(
        "# comment\n geometry_path = g.geojson \nattributes_path=a.csv\noutcome_column = y  # trailing\n"
        "candidate_predictor_columns = a, b ,c\ncontiguity = rook\nsnap_tolerance = 0.5\nalpha = 0.1\n"
        "group_k = 3\nmerge_policy = fail\nallow_islands = true\n",
        "/base");
    EXPECT_EQ(c.geometry_path, "g.geojson");
    EXPECT_EQ(c.outcome_column, "y");
    EXPECT_EQ(c.candidate_predictor_columns, (std::vector<std::string>{"a", "b", "c"}));
    EXPECT_EQ(c.contiguity, Contiguity::rook);
    ASSERT_TRUE(c.snap_tolerance.has_value());
    EXPECT_EQ(*c.snap_tolerance, 0.5);
    EXPECT_EQ(c.alpha, 0.1);
    EXPECT_EQ(c.group_k, 3u);
    EXPECT_EQ(c.merge_policy, MergePolicy::fail_on_unmatched);
    EXPECT_TRUE(c.allow_islands);
    EXPECT_EQ(c.resolve("a.csv"), fs::path("/base/a.csv"));
    EXPECT_EQ(c.resolve("/abs/a.csv"), fs::path("/abs/a.csv"));
    EXPECT_NO_THROW(validate(c));
}

TEST(Config, RejectsMalformedInput) {
    EXPECT_THROW(parse_config("no equals sign\n"), InputError);
    EXPECT_THROW(parse_config("mystery = 1\n"), InputError);
    EXPECT_THROW(parse_config("alpha = often\n"), InputError);
    EXPECT_THROW(parse_config("group_k = 2.5\n"), InputError);
    EXPECT_THROW(parse_config("contiguity = bishop\n"), InputError);
    EXPECT_THROW(parse_config("allow_islands = maybe\n"), InputError);
}

TEST(Config, ValidationCatchesInconsistentSettings) {
    const std::string base = "geometry_path = g\nattributes_path = a\n";
    EXPECT_THROW(validate(parse_config(base + "outcome_column = y\ncandidate_predictor_columns = x, y\n")),
                 InputError);
    EXPECT_THROW(validate(parse_config(base + "outcome_column = y\n")), InputError);
    EXPECT_THROW(validate(parse_config("outcome_column = y\ncandidate_predictor_columns = x\n")), InputError);
    EXPECT_THROW(validate(parse_config(base + "outcome_column = y\ncandidate_predictor_columns = x\nalpha = 1.5\n")),
                 InputError);
}

TEST(Pipeline, BundledCountyEndToEnd) {
    const auto dir = ts::scratch_dir("pipeline_county");
    auto cfg = load_config(kCounty / "county.cfg");
    cfg.output_dir = dir.string();
    const auto rep = run_pipeline(cfg);

    EXPECT_EQ(ts::slurp(dir / "dropped.csv"), "id,reason\n980200,geometry-only\n980300,geometry-only\n");
    EXPECT_EQ(rep.json["data"]["retained_units"], 400);
    EXPECT_EQ(rep.json["regression"]["decision"]["choice"], "fit-error");
    EXPECT_EQ(rep.json["tool"]["name"], "tractscope");
    for (const char* name : {"report.json", "report.txt", "augmented.geojson", "spatial_weights.txt", "outcome_map.svg",
                             "hotspot_map.svg", "groups_map.svg", "spearman_map.svg", "comparison.csv"}) {
        EXPECT_TRUE(fs::exists(dir / name)) << name;
    }
    const auto augmented = Json::parse(ts::slurp(dir / "augmented.geojson"));
    ASSERT_EQ(augmented["features"].size(), 400u);
    const auto& props = augmented["features"][0]["properties"];
    for (const char* key : {"gi_z", "gi_p", "gi_adjusted_p", "hotspot_class", "group"}) EXPECT_TRUE(props.contains(key)) << key;
    EXPECT_EQ(ts::slurp(dir / "report.txt"), rep.text);
}

TEST(Cli, WeightsOnTwoByTwoGrid) {
    const auto dir = write_grid_dataset("cli_weights", 2, 2, {1, 2, 3, 4});
    const auto r = run_cli("weights --config " + (dir / "study.cfg").string(), dir);
    ASSERT_EQ(r.status, 0) << r.err;
    const auto lines = ts::slurp(dir / "out" / "spatial_weights.txt");
    EXPECT_EQ(std::count(lines.begin(), lines.end(), '\n'), 13);
    EXPECT_FALSE(r.out.empty());
}

TEST(Cli, ConstantOutcomeFailsWithStageTag) {
    const auto dir = write_grid_dataset("cli_constant", 3, 3, std::vector<double>(9, 5.0));
    const auto r = run_cli("hotspot --config " + (dir / "study.cfg").string(), dir);
    EXPECT_NE(r.status, 0);
    EXPECT_NE(r.err.find("[hotspot]"), std::string::npos) << r.err;
    EXPECT_NE(r.err.find("constant"), std::string::npos) << r.err;
}

TEST(Cli, MissingConfigAndUnknownFlag) {
    const auto dir = ts::scratch_dir("cli_errors");
    EXPECT_NE(run_cli("pipeline --config " + (dir / "absent.cfg").string(), dir).status, 0);
    EXPECT_NE(run_cli("pipeline --config x.cfg --no-such-flag", dir).status, 0);
    const auto v = run_cli("--version", dir);
    EXPECT_EQ(v.status, 0);
    EXPECT_NE(v.out.find("1.0.0"), std::string::npos);
}

TEST(Cli, SubcommandsReproducePipelineSections) {
    const auto root = ts::scratch_dir("cli_sections");
    const auto full = root / "full";
    ASSERT_EQ(run_cli(county_args("pipeline", full), root).status, 0);
    const std::vector<std::pair<std::string, std::vector<std::string>>> sections{
        {"weights", {"weights.json", "weights.txt", "spatial_weights.txt", "islands.txt"}},
        {"hotspot", {"hotspot.json", "hotspot.txt", "hotspots.csv", "outcome_map.svg", "hotspot_map.svg"}},
        {"regress",
         {"regression.json", "regression.txt", "selection.csv", "ols_coefficients.csv", "spatial_coefficients.csv",
          "comparison.csv"}},
        {"cluster", {"grouping.json", "grouping.txt", "groups.csv", "assignments.csv", "groups_map.svg"}},
    };
    for (const auto& [sub, files] : sections) {
        const auto out = root / sub;
        const auto r = run_cli(county_args(sub, out), root);
        ASSERT_EQ(r.status, 0) << sub << ": " << r.err;
        for (const auto& f : files) EXPECT_EQ(ts::slurp(out / f), ts::slurp(full / f)) << sub << "/" << f;
        EXPECT_FALSE(fs::exists(out / "report.json")) << sub;
    }
    EXPECT_FALSE(fs::exists(root / "cluster" / "regression.json"));
}

TEST(Cli, OverridesReachTheConfig) {
    const auto root = ts::scratch_dir("cli_overrides");
    const auto out = root / "k3";
    const auto r = run_cli(county_args("cluster", out) + " --group-k 3 --grouping-features poverty_pct,renters_pct", root);
    ASSERT_EQ(r.status, 0) << r.err;
    const auto grouping = Json::parse(ts::slurp(out / "grouping.json"));
    EXPECT_EQ(grouping["k"], 3);
    EXPECT_EQ(grouping["features"], Json({"poverty_pct", "renters_pct"}));
}

TEST(Cli, RepeatedRunsAreByteIdentical) {
    const auto root = ts::scratch_dir("cli_determinism");
    ASSERT_EQ(run_cli(county_args("pipeline", root / "a"), root).status, 0);
    ASSERT_EQ(run_cli(county_args("pipeline", root / "b"), root).status, 0);
    std::size_t compared = 0;
    for (const auto& entry : fs::directory_iterator(root / "a")) {
        const auto name = entry.path().filename();
        EXPECT_EQ(ts::slurp(entry.path()), ts::slurp(root / "b" / name)) << name;
        ++compared;
    }
    EXPECT_GE(compared, 30u);
}
