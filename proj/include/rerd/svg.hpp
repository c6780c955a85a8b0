#pragma once

// Reward-vs-iteration plot as a standalone SVG with the data values embedded
// in a metadata block. Rendering is a pure function of the trajectory rows,
// so regenerating from the same summary is byte-identical.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

namespace rerd {

struct TrajectoryRow {
    std::string seed_label; // seed number, or "aggregate"
    int iteration = 0;
    double median_reward = 0.0;
    double p95_reward = 0.0;
    double mean_ll = 0.0;
    double feasibility = 0.0; // NaN when no constraint is configured
};

namespace detail {

inline std::string svg_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

inline std::string csv_num(double v) {
    if (std::isnan(v)) return "";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace detail

inline std::string render_trajectory_svg(const std::vector<TrajectoryRow>& rows) {
    const double width = 720, height = 440;
    const double left = 70, right = 20, top = 24, bottom = 48;

    std::map<std::string, std::vector<const TrajectoryRow*>> series;
    int max_iter = 0;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& row : rows) {
        series[row.seed_label].push_back(&row);
        max_iter = std::max(max_iter, row.iteration);
        if (std::isfinite(row.median_reward)) {
            lo = std::min(lo, row.median_reward);
            hi = std::max(hi, row.median_reward);
        }
    }
    if (!std::isfinite(lo)) { lo = 0.0; hi = 1.0; }
    if (hi - lo < 1e-12) { lo -= 0.5; hi += 0.5; }
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;

    auto sx = [&](double iter) {
        return left + (width - left - right) * (max_iter > 0 ? iter / max_iter : 0.5);
    };
    auto sy = [&](double value) {
        return height - bottom - (height - top - bottom) * (value - lo) / (hi - lo);
    };

    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::svg_num(width) +
           "\" height=\"" + detail::svg_num(height) + "\" viewBox=\"0 0 " + detail::svg_num(width) +
           " " + detail::svg_num(height) + "\">\n";
    out += "<metadata id=\"trajectory-data\">\n";
    out += "seed,iteration,median_reward,p95_reward,mean_ll,feasibility\n";
    for (const auto& row : rows)
        out += row.seed_label + "," + std::to_string(row.iteration) + "," +
               detail::csv_num(row.median_reward) + "," + detail::csv_num(row.p95_reward) + "," +
               detail::csv_num(row.mean_ll) + "," + detail::csv_num(row.feasibility) + "\n";
    out += "</metadata>\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    // axes and ticks
    out += "<g stroke=\"black\" stroke-width=\"1\">\n";
    out += "<line x1=\"" + detail::svg_num(left) + "\" y1=\"" + detail::svg_num(height - bottom) +
           "\" x2=\"" + detail::svg_num(width - right) + "\" y2=\"" +
           detail::svg_num(height - bottom) + "\"/>\n";
    out += "<line x1=\"" + detail::svg_num(left) + "\" y1=\"" + detail::svg_num(top) + "\" x2=\"" +
           detail::svg_num(left) + "\" y2=\"" + detail::svg_num(height - bottom) + "\"/>\n";
    out += "</g>\n";
    out += "<g font-family=\"sans-serif\" font-size=\"12\" fill=\"black\">\n";
    for (int tick = 0; tick <= 4; ++tick) {
        const double iter = max_iter * tick / 4.0;
        const double value = lo + (hi - lo) * tick / 4.0;
        out += "<text x=\"" + detail::svg_num(sx(iter)) + "\" y=\"" +
               detail::svg_num(height - bottom + 16) + "\" text-anchor=\"middle\">" +
               detail::svg_num(iter) + "</text>\n";
        out += "<text x=\"" + detail::svg_num(left - 6) + "\" y=\"" + detail::svg_num(sy(value) + 4) +
               "\" text-anchor=\"end\">" + detail::svg_num(value) + "</text>\n";
    }
    out += "<text x=\"" + detail::svg_num((left + width - right) / 2) + "\" y=\"" +
           detail::svg_num(height - 10) + "\" text-anchor=\"middle\">iteration</text>\n";
    out += "<text x=\"16\" y=\"" + detail::svg_num((top + height - bottom) / 2) +
           "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
           detail::svg_num((top + height - bottom) / 2) + ")\">median reward</text>\n";
    out += "</g>\n";

    auto polyline = [&](const std::vector<const TrajectoryRow*>& pts, const std::string& style) {
        if (pts.size() == 1) {
            return "<circle cx=\"" + detail::svg_num(sx(pts[0]->iteration)) + "\" cy=\"" +
                   detail::svg_num(sy(pts[0]->median_reward)) + "\" r=\"3\" " + style + "/>\n";
        }
        std::string line = "<polyline fill=\"none\" " + style + " points=\"";
        for (const auto* row : pts)
            line += detail::svg_num(sx(row->iteration)) + "," + detail::svg_num(sy(row->median_reward)) + " ";
        line += "\"/>\n";
        return line;
    };
    for (const auto& [label, pts] : series)
        if (label != "aggregate")
            out += polyline(pts, "stroke=\"#9dbcd4\" stroke-width=\"1\" fill=\"#9dbcd4\"");
    if (auto it = series.find("aggregate"); it != series.end())
        out += polyline(it->second, "stroke=\"#000000\" stroke-width=\"2.5\" fill=\"#000000\"");

    out += "</svg>\n";
    return out;
}

} // namespace rerd
