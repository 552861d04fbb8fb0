#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

namespace iwfqi::svg {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> band;  ///< optional half-widths drawn as a shaded band
};

namespace detail {

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

inline const char* color(std::size_t i) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
    return palette[i % (sizeof(palette) / sizeof(palette[0]))];
}

}  // namespace detail

/// Renders a simple line chart with axes, tick labels, optional confidence
/// bands, and a legend. Returns the SVG document as a string.
inline std::string line_chart(const std::string& title, const std::string& x_label,
                              const std::string& y_label, const std::vector<Series>& series,
                              int width = 760, int height = 480) {
    const double left = 72, right = 24, top = 48, bottom = 56;
    const double plot_w = width - left - right, plot_h = height - top - bottom;

    double x_min = 0.0, x_max = 1.0, y_min = 0.0, y_max = 1.0;
    bool first = true;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const double lo = s.band.empty() ? s.y[i] : s.y[i] - s.band[i];
            const double hi = s.band.empty() ? s.y[i] : s.y[i] + s.band[i];
            if (first) {
                x_min = x_max = s.x[i];
                y_min = lo;
                y_max = hi;
                first = false;
            } else {
                x_min = std::min(x_min, s.x[i]);
                x_max = std::max(x_max, s.x[i]);
                y_min = std::min(y_min, lo);
                y_max = std::max(y_max, hi);
            }
        }
    if (x_max == x_min) x_max = x_min + 1.0;
    if (y_max == y_min) y_max = y_min + 1.0;
    const double y_pad = 0.05 * (y_max - y_min);
    y_min -= y_pad;
    y_max += y_pad;

    auto map_x = [&](double v) { return left + (v - x_min) / (x_max - x_min) * plot_w; };
    auto map_y = [&](double v) { return top + (y_max - v) / (y_max - y_min) * plot_h; };

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << width / 2.0 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" "
        << "font-family=\"sans-serif\">" << title << "</text>\n";

    // Grid and ticks.
    const int ticks = 5;
    out << "<g font-size=\"11\" font-family=\"sans-serif\" fill=\"#333\">\n";
    for (int i = 0; i <= ticks; ++i) {
        const double fx = x_min + (x_max - x_min) * i / ticks;
        const double px = map_x(fx);
        out << "<line x1=\"" << px << "\" y1=\"" << top << "\" x2=\"" << px << "\" y2=\""
            << top + plot_h << "\" stroke=\"#ddd\"/>\n";
        out << "<text x=\"" << px << "\" y=\"" << top + plot_h + 18
            << "\" text-anchor=\"middle\">" << detail::num(fx) << "</text>\n";
        const double fy = y_min + (y_max - y_min) * i / ticks;
        const double py = map_y(fy);
        out << "<line x1=\"" << left << "\" y1=\"" << py << "\" x2=\"" << left + plot_w
            << "\" y2=\"" << py << "\" stroke=\"#ddd\"/>\n";
        out << "<text x=\"" << left - 6 << "\" y=\"" << py + 4
            << "\" text-anchor=\"end\">" << detail::num(fy) << "</text>\n";
    }
    out << "</g>\n";

    // Axes and labels.
    out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << plot_w << "\" height=\""
        << plot_h << "\" fill=\"none\" stroke=\"#333\"/>\n";
    out << "<text x=\"" << left + plot_w / 2.0 << "\" y=\"" << height - 12
        << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">" << x_label
        << "</text>\n";
    out << "<text x=\"16\" y=\"" << top + plot_h / 2.0
        << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\" "
        << "transform=\"rotate(-90 16 " << top + plot_h / 2.0 << ")\">" << y_label << "</text>\n";

    // Series: band, line, markers.
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* c = detail::color(k);
        if (!s.band.empty() && s.x.size() > 1) {
            out << "<polygon fill=\"" << c << "\" fill-opacity=\"0.15\" stroke=\"none\" points=\"";
            for (std::size_t i = 0; i < s.x.size(); ++i)
                out << detail::num(map_x(s.x[i])) << ',' << detail::num(map_y(s.y[i] + s.band[i]))
                    << ' ';
            for (std::size_t i = s.x.size(); i-- > 0;)
                out << detail::num(map_x(s.x[i])) << ',' << detail::num(map_y(s.y[i] - s.band[i]))
                    << ' ';
            out << "\"/>\n";
        }
        out << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            out << detail::num(map_x(s.x[i])) << ',' << detail::num(map_y(s.y[i])) << ' ';
        out << "\"/>\n";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            out << "<circle cx=\"" << detail::num(map_x(s.x[i])) << "\" cy=\""
                << detail::num(map_y(s.y[i])) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
    }

    // Legend.
    out << "<g font-size=\"12\" font-family=\"sans-serif\">\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const double ly = top + 10 + 18.0 * k;
        out << "<rect x=\"" << left + plot_w - 150 << "\" y=\"" << ly - 9
            << "\" width=\"12\" height=\"12\" fill=\"" << detail::color(k) << "\"/>\n";
        out << "<text x=\"" << left + plot_w - 132 << "\" y=\"" << ly + 2 << "\">"
            << series[k].label << "</text>\n";
    }
    out << "</g>\n</svg>\n";
    return out.str();
}

}  // namespace iwfqi::svg
