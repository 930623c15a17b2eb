#include "wsgn/ap_oracle.h"

#include <stdexcept>
#include <string>

namespace wsgn {

namespace {

double overlap_ratio(const Segment& a, const Segment& b) {
  const double lo = a.start > b.start ? a.start : b.start;
  const double hi = a.end < b.end ? a.end : b.end;
  if (hi <= lo) return 0.0;
  const double inter = hi - lo;
  return inter / ((a.end - a.start) + (b.end - b.start) - inter);
}

// True when detection i must be processed before detection j.
bool ranks_before(const std::vector<Detection>& d, std::size_t i, std::size_t j) {
  if (d[i].segment.confidence > d[j].segment.confidence) return true;
  if (d[i].segment.confidence < d[j].segment.confidence) return false;
  if (d[i].segment.start < d[j].segment.start) return true;
  if (d[i].segment.start > d[j].segment.start) return false;
  if (d[i].video_id < d[j].video_id) return true;
  if (d[i].video_id > d[j].video_id) return false;
  return i < j;
}

}  // namespace

double brute_force_ap(const std::vector<Detection>& dets, const std::vector<Detection>& gts,
                      double iou_threshold) {
  if (dets.size() > kBruteForceMaxDetections) {
    throw std::invalid_argument("brute_force_ap: " + std::to_string(dets.size()) +
                                " detections exceeds the oracle limit of " +
                                std::to_string(kBruteForceMaxDetections));
  }
  if (gts.empty()) return 0.0;

  // Selection order by repeated arg-max.
  std::vector<bool> used(dets.size(), false);
  std::vector<bool> gt_taken(gts.size(), false);
  std::vector<int> tp_count_at_rank;
  int tps = 0;
  for (std::size_t rank = 0; rank < dets.size(); ++rank) {
    std::size_t pick = dets.size();
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (used[i]) continue;
      if (pick == dets.size() || ranks_before(dets, i, pick)) pick = i;
    }
    used[pick] = true;

    int best_gt = -1;
    double best = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gt_taken[g] || gts[g].video_id != dets[pick].video_id) continue;
      const double o = overlap_ratio(dets[pick].segment, gts[g].segment);
      if (o > best) {
        best = o;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0 && best >= iou_threshold) {
      gt_taken[static_cast<std::size_t>(best_gt)] = true;
      ++tps;
    }
    tp_count_at_rank.push_back(tps);
  }

  // For each recall level k / n, the best precision among ranks reaching it.
  const int n = static_cast<int>(gts.size());
  double sum = 0.0;
  for (int level = 1; level <= n; ++level) {
    double best_precision = 0.0;
    for (std::size_t r = 0; r < tp_count_at_rank.size(); ++r) {
      if (tp_count_at_rank[r] < level) continue;
      const double p = static_cast<double>(tp_count_at_rank[r]) / static_cast<double>(r + 1);
      if (p > best_precision) best_precision = p;
    }
    sum += best_precision;
  }
  return sum / static_cast<double>(n);
}

}  // namespace wsgn
