#pragma once

#include <cstddef>
#include <string>

namespace wsgn {

// Class-labelled time interval [start, end) in seconds.
struct Segment {
  std::size_t class_id = 0;
  double start = 0.0;
  double end = 0.0;
  double confidence = 1.0;

  double duration() const { return end - start; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

// Ground-truth interval in frame units, [start_frame, end_frame).
struct FrameSegment {
  std::size_t class_id = 0;
  std::size_t start_frame = 0;
  std::size_t end_frame = 0;

  Segment to_seconds(double fps) const {
    return Segment{class_id, static_cast<double>(start_frame) / fps,
                   static_cast<double>(end_frame) / fps, 1.0};
  }
  friend bool operator==(const FrameSegment&, const FrameSegment&) = default;
};

// A segment tied to the video it belongs to.
struct Detection {
  std::string video_id;
  Segment segment;
  friend bool operator==(const Detection&, const Detection&) = default;
};

}  // namespace wsgn
