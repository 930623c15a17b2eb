#pragma once

#include <vector>

#include "wsgn/segment.h"

namespace wsgn {

inline constexpr std::size_t kBruteForceMaxDetections = 20;

// Reference AP for small instances: re-simulates greedy matching step by step
// and integrates the precision envelope level by level over recall k / n_gt.
// Throws std::invalid_argument above kBruteForceMaxDetections detections.
// Empty ground truth gives 0.
double brute_force_ap(const std::vector<Detection>& dets, const std::vector<Detection>& gts,
                      double iou_threshold);

}  // namespace wsgn
