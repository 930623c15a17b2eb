#include "wsgn/evaluator.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>

namespace wsgn {

double interval_iou(const Segment& a, const Segment& b) {
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = (a.end - a.start) + (b.end - b.start) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

namespace {

// sum over true positives of (1 / n_gt) * max precision at any rank >= it.
double envelope_ap(const std::vector<bool>& is_tp, std::size_t n_gt) {
  if (n_gt == 0) return 0.0;
  const std::size_t n = is_tp.size();
  std::vector<double> precision(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (is_tp[i]) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (is_tp[i]) ap += precision[i];
  }
  return ap / static_cast<double>(n_gt);
}

}  // namespace

double average_precision(const std::vector<Detection>& dets,
                         const std::vector<Detection>& gts, double iou_threshold) {
  if (gts.empty()) return 0.0;
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Segment& sa = dets[a].segment;
    const Segment& sb = dets[b].segment;
    if (sa.confidence != sb.confidence) return sa.confidence > sb.confidence;
    if (sa.start != sb.start) return sa.start < sb.start;
    return dets[a].video_id < dets[b].video_id;
  });

  std::map<std::string, std::vector<std::size_t>> gts_by_video;
  for (std::size_t g = 0; g < gts.size(); ++g) gts_by_video[gts[g].video_id].push_back(g);
  std::vector<bool> matched(gts.size(), false);

  std::vector<bool> is_tp;
  is_tp.reserve(order.size());
  for (std::size_t i : order) {
    const Detection& d = dets[i];
    double best_iou = -1.0;
    std::size_t best = gts.size();
    if (auto it = gts_by_video.find(d.video_id); it != gts_by_video.end()) {
      for (std::size_t g : it->second) {
        if (matched[g]) continue;
        const double iou = interval_iou(d.segment, gts[g].segment);
        if (iou > best_iou) {
          best_iou = iou;
          best = g;
        }
      }
    }
    const bool tp = best < gts.size() && best_iou >= iou_threshold;
    if (tp) matched[best] = true;
    is_tp.push_back(tp);
  }
  return envelope_ap(is_tp, gts.size());
}

EvalReport detection_map(const std::vector<Detection>& dets,
                         const std::vector<Detection>& gts,
                         const std::vector<double>& thresholds, std::size_t num_classes) {
  for (const auto* list : {&dets, &gts}) {
    for (const Detection& d : *list) {
      num_classes = std::max(num_classes, d.segment.class_id + 1);
    }
  }
  EvalReport r;
  r.thresholds = thresholds;
  r.num_classes = num_classes;
  r.num_dets.assign(num_classes, 0);
  r.num_gts.assign(num_classes, 0);
  std::vector<std::vector<Detection>> dets_by_class(num_classes), gts_by_class(num_classes);
  for (const Detection& d : dets) {
    dets_by_class[d.segment.class_id].push_back(d);
    ++r.num_dets[d.segment.class_id];
  }
  for (const Detection& g : gts) {
    gts_by_class[g.segment.class_id].push_back(g);
    ++r.num_gts[g.segment.class_id];
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  r.ap.assign(num_classes, std::vector<double>(thresholds.size(), nan));
  r.map.assign(thresholds.size(), 0.0);
  std::size_t counted = 0;
  for (std::size_t q = 0; q < num_classes; ++q) {
    if (gts_by_class[q].empty()) continue;
    ++counted;
    for (std::size_t k = 0; k < thresholds.size(); ++k) {
      r.ap[q][k] = average_precision(dets_by_class[q], gts_by_class[q], thresholds[k]);
      r.map[k] += r.ap[q][k];
    }
  }
  if (counted > 0) {
    for (double& m : r.map) m /= static_cast<double>(counted);
  }
  return r;
}

double ranked_average_precision(const std::vector<std::pair<double, bool>>& scored) {
  std::size_t n_pos = 0;
  for (const auto& [s, pos] : scored) n_pos += pos ? 1 : 0;
  if (n_pos == 0) return 0.0;
  std::vector<std::pair<double, bool>> sorted = scored;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  // One PR point at the end of each block of tied scores.
  std::vector<double> precision, recall_gain;
  std::size_t seen = 0, tp = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i, block_tp = 0;
    while (j < sorted.size() && sorted[j].first == sorted[i].first) {
      block_tp += sorted[j].second ? 1 : 0;
      ++j;
    }
    seen += j - i;
    tp += block_tp;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(seen));
    recall_gain.push_back(static_cast<double>(block_tp) / static_cast<double>(n_pos));
    i = j;
  }
  for (std::size_t i = precision.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double ap = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) ap += recall_gain[i] * precision[i];
  return ap;
}

LocReport localization_map(const std::vector<LocVideo>& videos, std::size_t num_classes) {
  LocReport r;
  r.num_classes = num_classes;
  r.ap.assign(num_classes, std::numeric_limits<double>::quiet_NaN());
  r.positives.assign(num_classes, 0);
  std::vector<std::vector<std::pair<double, bool>>> pooled(num_classes);
  for (const LocVideo& v : videos) {
    if (v.scores.cols() != num_classes || v.scores.rows() != v.frame_index.size()) {
      throw DimensionError("localization_map: video " + v.video_id + " has scores " +
                           v.scores.shape_string() + " for " +
                           std::to_string(v.frame_index.size()) + " timepoints and " +
                           std::to_string(num_classes) + " classes");
    }
    for (std::size_t k = 0; k < v.frame_index.size(); ++k) {
      const double when = static_cast<double>(v.frame_index[k]) / v.fps;
      for (std::size_t q = 0; q < num_classes; ++q) {
        bool positive = false;
        for (const Segment& g : v.gts) {
          if (g.class_id == q && when >= g.start && when < g.end) positive = true;
        }
        pooled[q].emplace_back(v.scores(k, q), positive);
        r.positives[q] += positive ? 1 : 0;
      }
    }
  }
  std::size_t counted = 0;
  for (std::size_t q = 0; q < num_classes; ++q) {
    if (r.positives[q] == 0) continue;
    r.ap[q] = ranked_average_precision(pooled[q]);
    r.map += r.ap[q];
    ++counted;
  }
  if (counted > 0) r.map /= static_cast<double>(counted);
  return r;
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string format_eval_report(const EvalReport& report) {
  std::string out = "class";
  char buf[32];
  for (double t : report.thresholds) {
    std::snprintf(buf, sizeof(buf), ",%.2f", t);
    out += buf;
  }
  out += '\n';
  for (std::size_t q = 0; q < report.num_classes; ++q) {
    out += std::to_string(q);
    for (double ap : report.ap[q]) out += ',' + fmt(ap);
    out += '\n';
  }
  out += "mAP";
  for (double m : report.map) out += ',' + fmt(m);
  out += '\n';
  return out;
}

std::string format_loc_report(const LocReport& report) {
  std::string out = "class,ap\n";
  for (std::size_t q = 0; q < report.num_classes; ++q) {
    out += std::to_string(q) + ',' + fmt(report.ap[q]) + '\n';
  }
  out += "mAP," + fmt(report.map) + '\n';
  return out;
}

}  // namespace wsgn
