#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cascade/grid.hpp"

namespace cascade {

/// Evaluation record of one lesion-bearing test image.
struct ImageEval {
    bool has_overlap = false;
    double dice = 0.0;       // lesion-vs-not binary dice
    int gt_class = 0;        // 2..4
    int pred_class = 0;      // 0 when no lesion pixels were predicted
};

/// 2|P n G| / (|P| + |G|); both masks empty -> 1 (a correctly predicted
/// healthy image). Shapes must agree.
double binary_dice(const MaskGrid& pred, const MaskGrid& gt);

/// Fraction of images whose prediction overlaps the ground truth at all.
double success_rate(std::span<const ImageEval> evals);

/// Mean dice over overlapping images only; NaN (with a warning) when no
/// image overlaps.
double dice1(std::span<const ImageEval> evals);

/// Mean dice over all images, zero-overlap ones contributing 0.
double dice2(std::span<const ImageEval> evals);

/// Fraction with pred_class == gt_class; a missing prediction counts wrong.
double majority_class_accuracy(std::span<const ImageEval> evals);

/// Builds the record for one image from label maps (lesion = labels >= 2).
ImageEval evaluate_image(const MaskGrid& pred_labels, const MaskGrid& gt_labels, int gt_class);

struct MetricSet {
    double success = 0.0;
    double dice1 = 0.0;
    double dice2 = 0.0;
    double accuracy = 0.0;
};

MetricSet compute_metrics(std::span<const ImageEval> evals);

/// One evaluated (protocol, fold, seed) cell.
struct CellMetrics {
    std::string protocol;
    int fold = 0;
    std::uint64_t seed = 0;
    MetricSet m;
};

struct ReportRow {
    std::string protocol;
    std::string fold;  // "0".."k-1" or "all"
    MetricSet m;
};

struct MetricsReport {
    std::vector<ReportRow> rows;
};

/// Aggregates cells into per-fold rows (median over seeds) plus one "all"
/// row per protocol (median over every cell). Protocol rows follow the fixed
/// comparison order: baseline, naive, hier_freeze, freeze_encoder,
/// hier_unfreeze. Rows violating dice2 <= dice1 are flagged with a warning.
MetricsReport build_report(std::span<const CellMetrics> cells);

/// protocol,fold,success,dice1,dice2,acc with %.6f values.
std::string report_csv(const MetricsReport& report);

/// Human-readable comparison table (the "all" rows).
std::string report_text(const MetricsReport& report);

/// Median of the defined (non-NaN) values; NaN when none are.
double median(std::vector<double> values);

}  // namespace cascade
