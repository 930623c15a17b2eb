#include "wsgn/datagen.h"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace wsgn {

std::size_t SynthConfig::max_segment_frames() const {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(max_segment_seconds * fps)));
}

std::size_t SynthConfig::min_segment_frames() const {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(min_segment_seconds * fps)));
}

void SynthConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("invalid synthetic config: " + field + " " + why);
  };
  if (num_classes == 0) fail("num_classes", "must be positive");
  if (feature_dim == 0) fail("feature_dim", "must be positive");
  if (min_frames < 2) fail("min_frames", "must be at least 2");
  if (min_frames > max_frames) fail("min_frames", "exceeds max_frames");
  if (!(fps > 0.0)) fail("fps", "must be positive");
  if (min_actions == 0) fail("min_actions", "must be at least 1");
  if (min_actions > max_actions) fail("min_actions", "exceeds max_actions");
  if (!(min_segment_seconds > 0.0)) fail("min_segment_seconds", "must be positive");
  if (min_segment_seconds > max_segment_seconds) {
    fail("min_segment_seconds", "exceeds max_segment_seconds");
  }
  if (!(amplitude >= 0.0)) fail("amplitude", "must be nonnegative");
  if (!(background_noise >= 0.0)) fail("background_noise", "must be nonnegative");
  if (!(action_noise >= 0.0)) fail("action_noise", "must be nonnegative");
  if (!(temporal_correlation >= 0.0 && temporal_correlation < 1.0)) {
    fail("temporal_correlation", "must lie in [0, 1)");
  }
  // Worst case: the most actions at the longest length, one background frame
  // between neighbours, in the shortest video.
  const std::size_t need = max_actions * max_segment_frames() + (max_actions - 1);
  if (need > min_frames) {
    throw ConfigError("infeasible placement: " + std::to_string(max_actions) +
                      " segments of up to " + std::to_string(max_segment_frames()) +
                      " frames need " + std::to_string(need) + " frames but min_frames is " +
                      std::to_string(min_frames));
  }
}

Matrix class_directions(std::size_t num_classes, std::size_t feature_dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix d(num_classes, feature_dim);
  const bool orthogonal = feature_dim >= num_classes;
  for (std::size_t q = 0; q < num_classes; ++q) {
    auto row = d.row(q);
    double norm = 0.0;
    do {
      for (double& v : row) v = normal(rng);
      if (orthogonal) {
        // Modified Gram-Schmidt against the earlier directions.
        for (std::size_t p = 0; p < q; ++p) {
          auto prev = d.row(p);
          double dot = 0.0;
          for (std::size_t m = 0; m < feature_dim; ++m) dot += row[m] * prev[m];
          for (std::size_t m = 0; m < feature_dim; ++m) row[m] -= dot * prev[m];
        }
      }
      norm = 0.0;
      for (double v : row) norm += v * v;
      norm = std::sqrt(norm);
    } while (norm < 1e-6);
    for (double& v : row) v /= norm;
  }
  return d;
}

std::vector<double> labels_from_segments(const std::vector<FrameSegment>& segments,
                                         std::size_t num_classes) {
  std::vector<double> y(num_classes, 0.0);
  for (const FrameSegment& s : segments) {
    if (s.class_id < num_classes) y[s.class_id] = 1.0;
  }
  return y;
}

Matrix frame_labels(const std::vector<FrameSegment>& segments, std::size_t frames,
                    std::size_t num_classes) {
  Matrix out(frames, num_classes);
  for (const FrameSegment& s : segments) {
    for (std::size_t t = s.start_frame; t < std::min(s.end_frame, frames); ++t) {
      out(t, s.class_id) = 1.0;
    }
  }
  return out;
}

namespace {

FeatureSequence make_video(const SynthConfig& cfg, const Matrix& directions, Rng& rng,
                           std::string id) {
  std::uniform_int_distribution<std::size_t> frames_dist(cfg.min_frames, cfg.max_frames);
  std::uniform_int_distribution<std::size_t> actions_dist(cfg.min_actions, cfg.max_actions);
  std::uniform_real_distribution<double> seconds_dist(cfg.min_segment_seconds,
                                                      cfg.max_segment_seconds);
  std::uniform_int_distribution<std::size_t> class_dist(0, cfg.num_classes - 1);
  std::normal_distribution<double> normal(0.0, 1.0);

  const std::size_t T = frames_dist(rng);
  const std::size_t k = actions_dist(rng);
  std::vector<std::size_t> lengths(k), classes(k);
  std::size_t occupied = k - 1;  // mandatory gaps between neighbours
  for (std::size_t i = 0; i < k; ++i) {
    lengths[i] = std::max<std::size_t>(1, static_cast<std::size_t>(
                                              std::lround(seconds_dist(rng) * cfg.fps)));
    classes[i] = class_dist(rng);
    occupied += lengths[i];
  }
  // validate() guarantees occupied <= T; spread the slack over k + 1 gaps.
  const std::size_t slack = T - occupied;
  std::uniform_int_distribution<std::size_t> cut_dist(0, slack);
  std::vector<std::size_t> cuts(k);
  for (auto& c : cuts) c = cut_dist(rng);
  std::sort(cuts.begin(), cuts.end());

  FeatureSequence v;
  v.id = std::move(id);
  v.fps = cfg.fps;
  std::size_t cursor = 0, prev_cut = 0;
  for (std::size_t i = 0; i < k; ++i) {
    cursor += cuts[i] - prev_cut + (i > 0 ? 1 : 0);
    prev_cut = cuts[i];
    v.segments.push_back({classes[i], cursor, cursor + lengths[i]});
    cursor += lengths[i];
  }
  v.labels = labels_from_segments(v.segments, cfg.num_classes);

  const std::size_t M = cfg.feature_dim;
  v.features = Matrix(T, M);
  std::vector<std::ptrdiff_t> frame_class(T, -1);
  for (const FrameSegment& s : v.segments) {
    for (std::size_t t = s.start_frame; t < s.end_frame; ++t) {
      frame_class[t] = static_cast<std::ptrdiff_t>(s.class_id);
    }
  }
  // Unit-variance AR(1) noise per feature: every frame is marginally
  // N(0, 1) while neighbouring frames are correlated by temporal_correlation.
  const double rho = cfg.temporal_correlation;
  const double innovation = std::sqrt(1.0 - rho * rho);
  std::vector<double> noise(M, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    auto row = v.features.row(t);
    const bool action = frame_class[t] >= 0;
    const double sigma = action ? cfg.action_noise : cfg.background_noise;
    for (std::size_t m = 0; m < M; ++m) {
      const double e = normal(rng);
      noise[m] = t == 0 ? e : rho * noise[m] + innovation * e;
      double x = sigma * noise[m];
      if (action) x += cfg.amplitude * directions(static_cast<std::size_t>(frame_class[t]), m);
      row[m] = static_cast<double>(static_cast<float>(x));
    }
  }
  return v;
}

Dataset make_split(const SynthConfig& cfg, const Matrix& directions, std::size_t count,
                   const std::string& split, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed & 0xffffffffu),
                    static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  Rng rng(seq);
  Dataset d;
  d.split = split;
  d.num_classes = cfg.num_classes;
  d.fps = cfg.fps;
  d.videos.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    char id[64];
    std::snprintf(id, sizeof(id), "%s_%04zu", split.c_str(), i);
    d.videos.push_back(make_video(cfg, directions, rng, id));
  }
  return d;
}

}  // namespace

SplitPair generate(const SynthConfig& config) {
  config.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed & 0xffffffffu),
                    static_cast<std::uint32_t>(config.seed >> 32), 1u};
  Rng dir_rng(seq);
  const Matrix directions = class_directions(config.num_classes, config.feature_dim, dir_rng);
  return SplitPair{make_split(config, directions, config.train_videos, "train", 2),
                   make_split(config, directions, config.test_videos, "test", 3)};
}

}  // namespace wsgn
