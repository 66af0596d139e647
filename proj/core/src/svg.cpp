#include "cascade/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cascade/common.hpp"

namespace cascade {

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kMarginL = 60, kMarginR = 20, kMarginT = 40, kMarginB = 40;

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string polyline(std::span<const EpochLog> logs, double (*pick)(const EpochLog&),
                     double lo, double hi, std::size_t n_epochs, const char* color) {
    std::ostringstream os;
    os << "  <polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    const double span = hi - lo > 0 ? hi - lo : 1.0;
    for (std::size_t i = 0; i < logs.size(); ++i) {
        const double x =
            kMarginL + (kWidth - kMarginL - kMarginR) * static_cast<double>(i) /
                           static_cast<double>(std::max<std::size_t>(n_epochs - 1, 1));
        const double y =
            kHeight - kMarginB - (kHeight - kMarginT - kMarginB) * (pick(logs[i]) - lo) / span;
        os << fmt(x) << "," << fmt(y) << " ";
    }
    os << "\"/>\n";
    return os.str();
}

}  // namespace

std::string loss_curves_svg(std::span<const EpochLog> logs, const std::string& title) {
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
       << kHeight << "\">\n";
    os << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "  <text x=\"" << kMarginL << "\" y=\"24\" font-family=\"monospace\" font-size=\"14\">"
       << title << "</text>\n";
    if (!logs.empty()) {
        double lo = logs[0].train_loss, hi = logs[0].train_loss;
        for (const auto& l : logs) {
            lo = std::min({lo, l.train_loss, l.val_loss});
            hi = std::max({hi, l.train_loss, l.val_loss});
        }
        const std::size_t n = logs.size();
        // phase boundaries
        for (std::size_t i = 1; i < n; ++i)
            if (logs[i].phase != logs[i - 1].phase) {
                const double x =
                    kMarginL + (kWidth - kMarginL - kMarginR) * static_cast<double>(i) /
                                   static_cast<double>(std::max<std::size_t>(n - 1, 1));
                os << "  <line x1=\"" << fmt(x) << "\" y1=\"" << kMarginT << "\" x2=\"" << fmt(x)
                   << "\" y2=\"" << kHeight - kMarginB
                   << "\" stroke=\"#cccccc\" stroke-dasharray=\"4 3\"/>\n";
            }
        os << polyline(logs, [](const EpochLog& l) { return l.train_loss; }, lo, hi, n,
                       "#1f77b4");
        os << polyline(logs, [](const EpochLog& l) { return l.val_loss; }, lo, hi, n, "#d62728");
        os << "  <text x=\"" << kMarginL << "\" y=\"" << kHeight - 12
           << "\" font-family=\"monospace\" font-size=\"12\">epochs: " << n
           << "  range: [" << fmt(lo) << ", " << fmt(hi)
           << "]  blue=train red=val</text>\n";
    }
    // axes
    os << "  <line x1=\"" << kMarginL << "\" y1=\"" << kMarginT << "\" x2=\"" << kMarginL
       << "\" y2=\"" << kHeight - kMarginB << "\" stroke=\"black\"/>\n";
    os << "  <line x1=\"" << kMarginL << "\" y1=\"" << kHeight - kMarginB << "\" x2=\""
       << kWidth - kMarginR << "\" y2=\"" << kHeight - kMarginB << "\" stroke=\"black\"/>\n";
    os << "</svg>\n";
    return os.str();
}

void write_loss_curves_svg(const std::string& path, std::span<const EpochLog> logs,
                           const std::string& title) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << loss_curves_svg(logs, title);
}

}  // namespace cascade
