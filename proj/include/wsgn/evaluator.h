#pragma once

// Temporal detection metrics: interval IoU, greedy matching, all-point
// interpolated average precision, mAP over an IoU grid, and timepoint-based
// localization mAP.

#include <filesystem>
#include <string>
#include <vector>

#include "wsgn/matrix.h"
#include "wsgn/segment.h"

namespace wsgn {

double interval_iou(const Segment& a, const Segment& b);

// AP for a single class. Detections are ranked by confidence (ties: earlier
// start, then video id, then input order); each one is a true positive when
// the best-IoU unmatched ground truth of its video reaches iou_threshold.
// Returns 0 when there is no ground truth.
double average_precision(const std::vector<Detection>& dets,
                         const std::vector<Detection>& gts, double iou_threshold);

struct EvalReport {
  std::vector<double> thresholds;
  std::size_t num_classes = 0;
  std::vector<std::vector<double>> ap;  // [class][threshold]; NaN without ground truth
  std::vector<double> map;              // per threshold
  std::vector<std::size_t> num_dets;
  std::vector<std::size_t> num_gts;

  bool has_ground_truth(std::size_t q) const { return num_gts[q] > 0; }
};

// Per-class AP pooled across videos, mAP over classes with ground truth.
EvalReport detection_map(const std::vector<Detection>& dets,
                         const std::vector<Detection>& gts,
                         const std::vector<double>& thresholds, std::size_t num_classes);

struct LocVideo {
  std::string video_id;
  Matrix scores;                         // K x C
  std::vector<std::size_t> frame_index;  // length K
  std::vector<Segment> gts;              // seconds
  double fps = 5.0;
};

struct LocReport {
  std::size_t num_classes = 0;
  std::vector<double> ap;  // NaN for classes without a positive timepoint
  std::vector<std::size_t> positives;
  double map = 0.0;
};

// Ranking AP over pooled (video, timepoint) scores per class. A timepoint is
// positive for class q when frame_index / fps falls in a class-q ground-truth
// interval. Tied scores are scored as one block.
LocReport localization_map(const std::vector<LocVideo>& videos, std::size_t num_classes);

// Envelope-interpolated AP of a ranked list of relevance flags grouped into
// tie blocks; used by localization_map.
double ranked_average_precision(const std::vector<std::pair<double, bool>>& scored);

// Rows are classes then a final "mAP" row; columns are IoU thresholds.
std::string format_eval_report(const EvalReport& report);
std::string format_loc_report(const LocReport& report);

}  // namespace wsgn
