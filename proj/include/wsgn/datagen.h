#pragma once

// Synthetic untrimmed "videos": per-frame feature rows where background frames
// are isotropic noise and frames inside an action segment of class q are
// centred on amplitude * d_q.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "wsgn/diffcore.h"
#include "wsgn/matrix.h"
#include "wsgn/segment.h"

namespace wsgn {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SynthConfig {
  std::size_t num_classes = 5;
  std::size_t feature_dim = 16;
  std::size_t train_videos = 200;
  std::size_t test_videos = 50;
  std::size_t min_frames = 40;
  std::size_t max_frames = 120;
  double fps = 5.0;
  std::size_t min_actions = 1;
  std::size_t max_actions = 2;
  double min_segment_seconds = 2.0;
  double max_segment_seconds = 3.5;
  double amplitude = 3.0;
  double background_noise = 1.0;
  double action_noise = 1.0;
  // Lag-one correlation of the per-frame noise, in [0, 1). Zero gives
  // independent frames; the marginal of every frame is unaffected.
  double temporal_correlation = 0.95;
  std::uint64_t seed = 0;

  std::size_t max_segment_frames() const;
  std::size_t min_segment_frames() const;
  // Throws ConfigError naming the offending field.
  void validate() const;
};

struct FeatureSequence {
  std::string id;
  std::string feature_path;  // relative to the manifest directory; may be empty
  Matrix features;           // T x M
  std::vector<double> labels;  // binary, length C
  std::vector<FrameSegment> segments;
  double fps = 5.0;

  std::size_t frames() const { return features.rows(); }
};

struct Dataset {
  std::string split;
  std::size_t num_classes = 0;
  double fps = 5.0;
  std::vector<FeatureSequence> videos;
};

struct SplitPair {
  Dataset train;
  Dataset test;
};

// Unit class directions, orthonormal when feature_dim >= num_classes.
Matrix class_directions(std::size_t num_classes, std::size_t feature_dim, Rng& rng);

// Deterministic in `config` (seed included). Feature values are rounded to
// single precision so an on-disk round trip reproduces them exactly.
SplitPair generate(const SynthConfig& config);

// Label vector implied by a segment list.
std::vector<double> labels_from_segments(const std::vector<FrameSegment>& segments,
                                         std::size_t num_classes);

// T x C per-frame indicator matrix of the segments.
Matrix frame_labels(const std::vector<FrameSegment>& segments, std::size_t frames,
                    std::size_t num_classes);

}  // namespace wsgn
