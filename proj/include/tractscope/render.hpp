#pragma once

// SVG choropleth maps: quantile-binned continuous values or fixed-palette
// categories. Output bytes depend only on the inputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "tractscope/error.hpp"
#include "tractscope/hotspot.hpp"
#include "tractscope/ingest.hpp"

namespace tractscope {

struct LegendEntry {
    std::string label;
    std::string color;
};

/// Sequential yellow-to-red, lightest bin first.
inline const std::vector<std::string>& sequential_palette() {
    static const std::vector<std::string> p{"#ffffb2", "#fecc5c", "#fd8d3c", "#f03b20", "#bd0026"};
    return p;
}

/// Hot/cold tiers in legend order (hot99 ... cold99).
inline std::vector<LegendEntry> hotspot_legend() {
    static const char* colors[] = {"#d62f27", "#ed7551", "#fab984", "#f0f0f0", "#c0ccbe", "#849eba", "#4575b5"};
    static const char* labels[] = {"Hot spot, 99% confidence", "Hot spot, 95% confidence", "Hot spot, 90% confidence",
                                   "Not significant",          "Cold spot, 90% confidence", "Cold spot, 95% confidence",
                                   "Cold spot, 99% confidence"};
    std::vector<LegendEntry> out;
    for (std::size_t i = 0; i < 7; ++i) out.push_back({labels[i], colors[i]});
    return out;
}

inline std::size_t hotspot_legend_index(HotspotClass c) {
    for (std::size_t i = 0; i < 7; ++i) {
        if (kHotspotClasses[i] == c) return i;
    }
    return 3;
}

/// Qualitative palette for groups 1..k (cycles after 10).
inline std::vector<LegendEntry> group_legend(std::size_t k) {
    static const char* colors[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e",
                                   "#e6ab02", "#a6761d", "#666666", "#1f78b4", "#b2df8a"};
    std::vector<LegendEntry> out;
    for (std::size_t g = 0; g < k; ++g) out.push_back({"Group " + std::to_string(g + 1), colors[g % 10]});
    return out;
}

/// Linear-interpolation sample quantile (R type 7) of unsorted values.
inline double quantile(std::vector<double> values, double p) {
    if (values.empty()) throw InputError("quantile: empty input");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

/// Interior class breaks for `classes` quantile bins.
inline std::vector<double> quantile_breaks(const std::vector<double>& values, std::size_t classes = 5) {
    std::vector<double> breaks;
    for (std::size_t k = 1; k < classes; ++k) {
        breaks.push_back(quantile(values, static_cast<double>(k) / static_cast<double>(classes)));
    }
    return breaks;
}

/// Bin index for lower-closed intervals [b_k, b_{k+1}).
inline std::size_t quantile_class(double value, const std::vector<double>& breaks) {
    return static_cast<std::size_t>(std::upper_bound(breaks.begin(), breaks.end(), value) - breaks.begin());
}

namespace detail {

inline std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string fmt4g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

inline std::string render_svg(const std::vector<AreaUnit>& units, const std::vector<std::string>& fills,
                              const std::vector<LegendEntry>& legend, const std::string& title) {
    if (units.empty()) throw InputError("render: empty geometry");
    double xmin = std::numeric_limits<double>::infinity(), ymin = xmin, xmax = -xmin, ymax = -xmin;
    for (const auto& u : units) {
        for (const auto& poly : u.polygons) {
            for (const auto& ring : poly) {
                for (const auto& p : ring) {
                    xmin = std::min(xmin, p.x);
                    xmax = std::max(xmax, p.x);
                    ymin = std::min(ymin, p.y);
                    ymax = std::max(ymax, p.y);
                }
            }
        }
    }
    constexpr double kMap = 600.0, kMargin = 20.0, kTitle = 40.0, kLegend = 240.0;
    const double span = std::max({xmax - xmin, ymax - ymin, std::numeric_limits<double>::min()});
    const double scale = kMap / span;
    const double map_w = (xmax - xmin) * scale, map_h = (ymax - ymin) * scale;
    const double width = kMargin + map_w + kMargin + kLegend;
    const double legend_h = 30.0 + 22.0 * static_cast<double>(legend.size());
    const double height = kTitle + std::max(map_h, legend_h) + kMargin;

    std::string svg;
    svg += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt2(width) + "\" height=\"" + fmt2(height) +
           "\" viewBox=\"0 0 " + fmt2(width) + " " + fmt2(height) + "\">\n";
    svg += "<rect x=\"0\" y=\"0\" width=\"" + fmt2(width) + "\" height=\"" + fmt2(height) + "\" fill=\"#ffffff\"/>\n";
    svg += "<text x=\"" + fmt2(kMargin) + "\" y=\"26\" font-family=\"sans-serif\" font-size=\"16\">" + xml_escape(title) +
           "</text>\n";
    svg += "<g stroke=\"#555555\" stroke-width=\"0.5\" fill-rule=\"evenodd\">\n";
    for (std::size_t i = 0; i < units.size(); ++i) {
        std::string d;
        for (const auto& poly : units[i].polygons) {
            for (const auto& ring : poly) {
                for (std::size_t k = 0; k + 1 < ring.size(); ++k) {
                    d += k == 0 ? "M" : "L";
                    d += fmt2(kMargin + (ring[k].x - xmin) * scale) + " " + fmt2(kTitle + (ymax - ring[k].y) * scale);
                }
                d += "Z";
            }
        }
        svg += "<path d=\"" + d + "\" fill=\"" + fills[i] + "\"><title>" + xml_escape(units[i].id) + "</title></path>\n";
    }
    svg += "</g>\n";
    const double lx = kMargin + map_w + kMargin;
    svg += "<g font-family=\"sans-serif\" font-size=\"12\">\n";
    for (std::size_t k = 0; k < legend.size(); ++k) {
        const double ly = kTitle + 10.0 + 22.0 * static_cast<double>(k);
        svg += "<rect x=\"" + fmt2(lx) + "\" y=\"" + fmt2(ly) + "\" width=\"16\" height=\"16\" fill=\"" + legend[k].color +
               "\" stroke=\"#555555\" stroke-width=\"0.5\"/>";
        svg += "<text x=\"" + fmt2(lx + 22.0) + "\" y=\"" + fmt2(ly + 12.5) + "\">" + xml_escape(legend[k].label) +
               "</text>\n";
    }
    svg += "</g>\n</svg>\n";
    return svg;
}

}  // namespace detail

/// Continuous values in 5 quantile classes.
inline std::string render_choropleth(const std::vector<AreaUnit>& units, const std::vector<double>& values,
                                     const std::string& title) {
    if (units.empty()) throw InputError("render: empty geometry");
    if (values.size() != units.size()) throw InputError("render: need one value per unit");
    const auto& palette = sequential_palette();
    const auto breaks = quantile_breaks(values, palette.size());
    const auto [vmin, vmax] = std::minmax_element(values.begin(), values.end());
    std::vector<std::string> fills;
    for (double v : values) fills.push_back(palette[quantile_class(v, breaks)]);
    std::vector<LegendEntry> legend;
    for (std::size_t k = 0; k < palette.size(); ++k) {
        const double lo = k == 0 ? *vmin : breaks[k - 1];
        const double hi = k + 1 == palette.size() ? *vmax : breaks[k];
        const char* close = k + 1 == palette.size() ? "]" : ")";
        legend.push_back({"[" + detail::fmt4g(lo) + ", " + detail::fmt4g(hi) + close, palette[k]});
    }
    return detail::render_svg(units, fills, legend, title);
}

/// Categorical values: `categories[i]` indexes into `legend`.
inline std::string render_categorical(const std::vector<AreaUnit>& units, const std::vector<std::size_t>& categories,
                                      const std::vector<LegendEntry>& legend, const std::string& title) {
    if (units.empty()) throw InputError("render: empty geometry");
    if (categories.size() != units.size()) throw InputError("render: need one class per unit");
    std::vector<std::string> fills;
    for (auto c : categories) {
        if (c >= legend.size()) throw InputError("render: class index outside the legend");
        fills.push_back(legend[c].color);
    }
    return detail::render_svg(units, fills, legend, title);
}

inline std::string render_hotspots(const std::vector<AreaUnit>& units, const std::vector<HotspotClass>& classes,
                                   const std::string& title) {
    std::vector<std::size_t> idx;
    for (auto c : classes) idx.push_back(hotspot_legend_index(c));
    return render_categorical(units, idx, hotspot_legend(), title);
}

/// Groups labeled 1..k.
inline std::string render_groups(const std::vector<AreaUnit>& units, const std::vector<int>& groups, const std::string& title) {
    const int k = groups.empty() ? 0 : *std::max_element(groups.begin(), groups.end());
    std::vector<std::size_t> idx;
    for (int g : groups) {
        if (g < 1) throw InputError("render: group labels start at 1");
        idx.push_back(static_cast<std::size_t>(g - 1));
    }
    return render_categorical(units, idx, group_legend(static_cast<std::size_t>(k)), title);
}

}  // namespace tractscope
