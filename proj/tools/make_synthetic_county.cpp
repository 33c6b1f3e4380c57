// Writes the bundled synthetic county: tracts.geojson, attributes.csv and
// county.cfg into the given directory.

#include <cstdio>
#include <filesystem>
#include <string>

#include <CLI11.hpp>

#include "tractscope/pipeline.hpp"
#include "tractscope/synthetic.hpp"

int main(int argc, char** argv) {
    CLI::App app{"generate the synthetic county dataset"};
    std::string dir = "data/synthetic_county";
    unsigned long long seed = 20200531;
    app.add_option("-o,--output", dir, "output directory");
    app.add_option("-s,--seed", seed, "random seed");
    CLI11_PARSE(app, argc, argv);

    try {
        const auto county = tractscope::make_synthetic_county(seed);
        std::filesystem::create_directories(dir);
        const std::filesystem::path root(dir);
        tractscope::write_text_file(root / "tracts.geojson", tractscope::serialize_geometry(county.units));
        tractscope::write_text_file(root / "attributes.csv", county.attributes_csv);
        tractscope::write_text_file(root / "county.cfg", tractscope::synthetic_county_config());
        std::printf("wrote %zu tracts to %s\n", county.units.size(), dir.c_str());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
