#include "cascade/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "cascade/common.hpp"
#include "cascade/dataset.hpp"

namespace cascade {

double binary_dice(const MaskGrid& pred, const MaskGrid& gt) {
    if (pred.h != gt.h || pred.w != gt.w)
        throw ShapeError("binary_dice: mask shapes differ");
    std::size_t np = 0, ng = 0, ni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred.v[i] != 0, g = gt.v[i] != 0;
        np += p;
        ng += g;
        ni += p && g;
    }
    if (np + ng == 0) return 1.0;
    return 2.0 * static_cast<double>(ni) / static_cast<double>(np + ng);
}

double success_rate(std::span<const ImageEval> evals) {
    if (evals.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& e : evals) hits += e.has_overlap;
    return static_cast<double>(hits) / static_cast<double>(evals.size());
}

double dice1(std::span<const ImageEval> evals) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& e : evals)
        if (e.has_overlap) {
            sum += e.dice;
            ++n;
        }
    if (n == 0) {
        log_warn("dice1: no overlapping image; value undefined");
        return std::numeric_limits<double>::quiet_NaN();
    }
    return sum / static_cast<double>(n);
}

double dice2(std::span<const ImageEval> evals) {
    if (evals.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& e : evals) sum += e.has_overlap ? e.dice : 0.0;
    return sum / static_cast<double>(evals.size());
}

double majority_class_accuracy(std::span<const ImageEval> evals) {
    if (evals.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& e : evals) hits += e.pred_class == e.gt_class;
    return static_cast<double>(hits) / static_cast<double>(evals.size());
}

ImageEval evaluate_image(const MaskGrid& pred_labels, const MaskGrid& gt_labels, int gt_class) {
    if (pred_labels.h != gt_labels.h || pred_labels.w != gt_labels.w)
        throw ShapeError("evaluate_image: label map shapes differ");
    MaskGrid pred(pred_labels.h, pred_labels.w, 0);
    MaskGrid gt(gt_labels.h, gt_labels.w, 0);
    bool overlap = false;
    std::array<std::size_t, 256> counts{};
    for (std::size_t i = 0; i < pred_labels.size(); ++i) {
        const bool p = pred_labels.v[i] >= kLabelLesion;
        const bool g = gt_labels.v[i] >= kLabelLesion;
        pred.v[i] = p;
        gt.v[i] = g;
        overlap = overlap || (p && g);
        if (p) ++counts[pred_labels.v[i]];
    }
    ImageEval e;
    e.gt_class = gt_class;
    e.has_overlap = overlap;
    e.dice = binary_dice(pred, gt);
    std::size_t best_count = 0;
    for (int cls = kLabelLesion; cls < 256; ++cls)
        if (counts[cls] > best_count) {
            best_count = counts[cls];
            e.pred_class = cls;
        }
    return e;
}

MetricSet compute_metrics(std::span<const ImageEval> evals) {
    MetricSet m;
    m.success = success_rate(evals);
    m.dice1 = dice1(evals);
    m.dice2 = dice2(evals);
    m.accuracy = majority_class_accuracy(evals);
    return m;
}

double median(std::vector<double> values) {
    std::erase_if(values, [](double v) { return std::isnan(v); });
    if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

const char* kRowOrder[] = {"baseline", "naive", "hier_freeze", "freeze_encoder", "hier_unfreeze"};

MetricSet median_of(const std::vector<MetricSet>& ms) {
    std::vector<double> s, d1, d2, a;
    for (const auto& m : ms) {
        s.push_back(m.success);
        d1.push_back(m.dice1);
        d2.push_back(m.dice2);
        a.push_back(m.accuracy);
    }
    return MetricSet{median(s), median(d1), median(d2), median(a)};
}

std::string fmt6(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

MetricsReport build_report(std::span<const CellMetrics> cells) {
    std::vector<std::string> protocols;
    for (const char* p : kRowOrder)
        for (const auto& c : cells)
            if (c.protocol == p) {
                protocols.emplace_back(p);
                break;
            }
    // any protocols outside the known order come last, in first appearance order
    for (const auto& c : cells)
        if (std::find(protocols.begin(), protocols.end(), c.protocol) == protocols.end())
            protocols.push_back(c.protocol);

    MetricsReport report;
    for (const auto& proto : protocols) {
        std::map<int, std::vector<MetricSet>> per_fold;
        std::vector<MetricSet> every;
        for (const auto& c : cells)
            if (c.protocol == proto) {
                per_fold[c.fold].push_back(c.m);
                every.push_back(c.m);
            }
        for (const auto& [fold, ms] : per_fold)
            report.rows.push_back(ReportRow{proto, std::to_string(fold), median_of(ms)});
        report.rows.push_back(ReportRow{proto, "all", median_of(every)});
    }
    for (const auto& row : report.rows)
        if (!std::isnan(row.m.dice1) && row.m.dice2 > row.m.dice1 + 1e-12)
            log_warn("report: dice2 > dice1 for protocol '" + row.protocol + "' fold " + row.fold);
    return report;
}

std::string report_csv(const MetricsReport& report) {
    std::ostringstream os;
    os << "protocol,fold,success,dice1,dice2,acc\n";
    for (const auto& row : report.rows)
        os << row.protocol << "," << row.fold << "," << fmt6(row.m.success) << ","
           << fmt6(row.m.dice1) << "," << fmt6(row.m.dice2) << "," << fmt6(row.m.accuracy) << "\n";
    return os.str();
}

std::string report_text(const MetricsReport& report) {
    std::ostringstream os;
    os << "protocol          dice1   dice2   success accuracy\n";
    os << "--------------------------------------------------\n";
    char buf[128];
    for (const auto& row : report.rows) {
        if (row.fold != "all") continue;
        std::snprintf(buf, sizeof(buf), "%-17s %-7.3f %-7.3f %-7.3f %-7.3f\n", row.protocol.c_str(),
                      row.m.dice1, row.m.dice2, row.m.success, row.m.accuracy);
        os << buf;
    }
    return os.str();
}

}  // namespace cascade
