#pragma once

// Segment-level detection metrics: greedy tIoU matching, per-class average
// precision, mAP over a threshold grid, and a confusion matrix with a
// background row/column. Reports serialize to JSON, CSV, and SVG.

#include <cstddef>
#include <string>
#include <vector>

#include "cetal/heads.hpp"

namespace cetal {

inline double tiou(const Segment& a, const Segment& b) { return segment_tiou(a, b); }

// the standard grid: 0.3 to 0.7 in 5 steps
std::vector<double> default_tiou_thresholds();

// All-point interpolated AP for one class. Predictions are matched greedily in
// score order to the highest-tIoU unmatched ground truth with tIoU >= threshold
// (tIoU ties broken by earliest GT start). Returns 0 when gts is empty.
double average_precision(std::vector<Segment> preds,
                         const std::vector<Segment>& gts, double threshold);

struct EvalReport {
  std::vector<double> thresholds;
  std::vector<std::vector<double>> ap;  // [class][threshold], -1 for zero-GT classes
  std::vector<double> map_per_threshold;
  double avg_map = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [C+1][C+1], last = background
  double confusion_tiou = 0.5;
  std::vector<std::size_t> gt_count;    // per class
  std::vector<std::size_t> pred_count;  // per class

  std::string to_json() const;
  std::string confusion_csv() const;
  std::string confusion_svg() const;  // row-normalized heatmap
  std::string map_chart_svg() const;  // mAP vs threshold line chart
};

// Predictions and ground truth are given per sequence; matching is performed
// within each sequence and precision/recall pooled across them. Classes with
// zero GT are excluded from the mAP mean. Throws DataError when the dataset
// has no ground truth at all.
EvalReport evaluate(const std::vector<std::vector<Segment>>& preds,
                    const std::vector<std::vector<Segment>>& gts,
                    std::size_t num_classes,
                    const std::vector<double>& thresholds = default_tiou_thresholds(),
                    double confusion_tiou = 0.5);

// Each GT takes the label of its best-tIoU prediction at or above the
// threshold, else the background column; predictions overlapping no GT land in
// the background row. Shape [C+1][C+1], rows GT, columns predicted.
std::vector<std::vector<std::size_t>> confusion_matrix(
    const std::vector<std::vector<Segment>>& preds,
    const std::vector<std::vector<Segment>>& gts, std::size_t num_classes,
    double tiou_threshold);

}  // namespace cetal
