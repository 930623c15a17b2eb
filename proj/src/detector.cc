#include "wsgn/detector.h"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "wsgn/formats.h"

namespace wsgn {

void DetectorConfig::validate() const {
  if (!(min_duration >= 0.0)) throw std::invalid_argument("min_duration must be nonnegative");
  if (!(fps > 0.0)) throw std::invalid_argument("fps must be positive");
}

std::vector<Segment> extract_segments(const Matrix& scores, const DetectorConfig& config) {
  config.validate();
  std::vector<Segment> out;
  const std::size_t T = scores.rows();
  for (std::size_t q = 0; q < scores.cols(); ++q) {
    std::size_t t = 0;
    while (t < T) {
      if (!(scores(t, q) > config.score_threshold)) {
        ++t;
        continue;
      }
      const std::size_t first = t;
      double total = 0.0;
      for (; t < T && scores(t, q) > config.score_threshold; ++t) total += scores(t, q);
      const std::size_t length = t - first;
      const Segment s{q, static_cast<double>(first) / config.fps,
                      static_cast<double>(t) / config.fps,
                      total / static_cast<double>(length)};
      if (s.duration() > config.min_duration) out.push_back(s);
    }
  }
  return out;
}

std::vector<std::size_t> sample_timepoints(std::size_t frames, std::size_t count) {
  if (frames == 0 || count == 0) {
    throw std::invalid_argument("sample_timepoints needs at least one frame and one point");
  }
  std::vector<std::size_t> idx(count, 0);
  if (count == 1 || frames == 1) return idx;
  const double step = static_cast<double>(frames - 1) / static_cast<double>(count - 1);
  for (std::size_t k = 0; k < count; ++k) {
    idx[k] = static_cast<std::size_t>(std::llround(static_cast<double>(k) * step));
  }
  return idx;
}

Matrix score_timepoints(const Matrix& scores, std::size_t count) {
  const std::vector<std::size_t> idx = sample_timepoints(scores.rows(), count);
  Matrix out(count, scores.cols());
  for (std::size_t k = 0; k < count; ++k) {
    auto src = scores.row(idx[k]);
    std::copy(src.begin(), src.end(), out.row(k).begin());
  }
  return out;
}

std::string format_detections(const std::vector<Detection>& dets) {
  std::string text;
  char buf[256];
  for (const Detection& d : dets) {
    std::snprintf(buf, sizeof(buf), ",%zu,%.6f,%.6f,%.6f\n", d.segment.class_id,
                  d.segment.start, d.segment.end, d.segment.confidence);
    text += d.video_id;
    text += buf;
  }
  return text;
}

std::vector<Detection> parse_detections(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::vector<Detection> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string item;
    while (std::getline(ls, item, ',')) f.push_back(item);
    if (f.size() != 5) {
      throw FormatError(source + ":" + std::to_string(lineno) +
                        ": expected 5 comma-separated fields");
    }
    const std::string where = source + ":" + std::to_string(lineno);
    Detection d{f[0], Segment{parse_uint(f[1], where), parse_double(f[2], where),
                              parse_double(f[3], where), parse_double(f[4], where)}};
    if (!(d.segment.end > d.segment.start)) {
      throw FormatError(where + ": segment end must exceed start");
    }
    out.push_back(std::move(d));
  }
  return out;
}

void write_detections(const std::filesystem::path& path, const std::vector<Detection>& dets) {
  write_file(path, format_detections(dets));
}

std::vector<Detection> read_detections(const std::filesystem::path& path) {
  return parse_detections(read_file(path), path.string());
}

}  // namespace wsgn
