#pragma once

// Turns per-frame fused score matrices into timestamped detections.

#include <filesystem>
#include <string>
#include <vector>

#include "wsgn/matrix.h"
#include "wsgn/segment.h"

namespace wsgn {

struct DetectorConfig {
  double score_threshold = 0.1;
  double min_duration = 1.0;  // seconds; kept runs must be strictly longer
  double fps = 5.0;

  void validate() const;
};

// Maximal runs of frames with score > threshold, per class, kept when their
// duration exceeds min_duration. Confidence is the mean score over the run.
// Sorted by (class, start).
std::vector<Segment> extract_segments(const Matrix& scores, const DetectorConfig& config);

// K frame indices round(k (T-1) / (K-1)), all zero when K == 1 or T == 1.
std::vector<std::size_t> sample_timepoints(std::size_t frames, std::size_t count);

// Rows of `scores` gathered at sample_timepoints(T, K).
Matrix score_timepoints(const Matrix& scores, std::size_t count);

// One detection per line: video_id,class_id,start,end,confidence with six
// fractional digits.
std::string format_detections(const std::vector<Detection>& dets);
// `source` prefixes error messages.
std::vector<Detection> parse_detections(const std::string& text, const std::string& source);
void write_detections(const std::filesystem::path& path, const std::vector<Detection>& dets);
std::vector<Detection> read_detections(const std::filesystem::path& path);

}  // namespace wsgn
