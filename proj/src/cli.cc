#include "wsgn/cli.h"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

#include "wsgn/formats.h"

namespace wsgn {

std::filesystem::path RunConfig::data_dir() const { return data.empty() ? out : data; }

std::filesystem::path RunConfig::checkpoint_path() const {
  return checkpoint.empty() ? out / "model.ckpt" : checkpoint;
}

std::filesystem::path RunConfig::manifest_path() const {
  return manifest.empty() ? data_dir() / "test.manifest" : manifest;
}

std::filesystem::path RunConfig::detections_path() const {
  return detections.empty() ? out / "detections.csv" : detections;
}

std::filesystem::path RunConfig::timepoints_path() const {
  return timepoints_file.empty() ? out / "timepoints.csv" : timepoints_file;
}

namespace {

using Setter = std::function<void(RunConfig&, const std::string&)>;

struct KeyEntry {
  ConfigKey key;
  Setter set;
};

std::size_t as_size(const std::string& v, const std::string& key) {
  return static_cast<std::size_t>(parse_uint(v, key));
}

double as_double(const std::string& v, const std::string& key) { return parse_double(v, key); }

bool as_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<double> as_list(const std::string& v, const std::string& key) {
  std::vector<double> out;
  std::istringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_double(item, key));
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
  return out;
}

template <typename Field>
KeyEntry size_key(std::string section, std::string name, Field field, std::string help) {
  std::string key = name;
  return {{std::move(section), std::move(name), false, std::move(help)},
          [field, key](RunConfig& c, const std::string& v) { field(c) = as_size(v, key); }};
}

template <typename Field>
KeyEntry real_key(std::string section, std::string name, Field field, std::string help) {
  std::string key = name;
  return {{std::move(section), std::move(name), false, std::move(help)},
          [field, key](RunConfig& c, const std::string& v) { field(c) = as_double(v, key); }};
}

template <typename Field>
KeyEntry path_key(std::string name, Field field, std::string help) {
  return {{"run", std::move(name), false, std::move(help)},
          [field](RunConfig& c, const std::string& v) { field(c) = v; }};
}

template <typename Field>
KeyEntry flag_key(std::string name, Field field, std::string help) {
  std::string key = name;
  return {{"run", std::move(name), true, std::move(help)},
          [field, key](RunConfig& c, const std::string& v) { field(c) = as_bool(v, key); }};
}

const std::vector<KeyEntry>& registry() {
  static const std::vector<KeyEntry> entries = [] {
    std::vector<KeyEntry> e;
    e.push_back(size_key("synth", "num_classes",
                         [](RunConfig& c) -> auto& { return c.synth.num_classes; },
                         "number of action classes"));
    e.push_back(size_key("synth", "feature_dim",
                         [](RunConfig& c) -> auto& { return c.synth.feature_dim; },
                         "feature dimension per frame"));
    e.push_back(size_key("synth", "train_videos",
                         [](RunConfig& c) -> auto& { return c.synth.train_videos; },
                         "training videos"));
    e.push_back(size_key("synth", "test_videos",
                         [](RunConfig& c) -> auto& { return c.synth.test_videos; },
                         "test videos"));
    e.push_back(size_key("synth", "min_frames",
                         [](RunConfig& c) -> auto& { return c.synth.min_frames; },
                         "shortest video in frames"));
    e.push_back(size_key("synth", "max_frames",
                         [](RunConfig& c) -> auto& { return c.synth.max_frames; },
                         "longest video in frames"));
    e.push_back(real_key("synth", "fps", [](RunConfig& c) -> auto& { return c.synth.fps; },
                         "frames per second"));
    e.push_back(size_key("synth", "min_actions",
                         [](RunConfig& c) -> auto& { return c.synth.min_actions; },
                         "fewest action segments per video"));
    e.push_back(size_key("synth", "max_actions",
                         [](RunConfig& c) -> auto& { return c.synth.max_actions; },
                         "most action segments per video"));
    e.push_back(real_key("synth", "min_segment_seconds",
                         [](RunConfig& c) -> auto& { return c.synth.min_segment_seconds; },
                         "shortest action segment"));
    e.push_back(real_key("synth", "max_segment_seconds",
                         [](RunConfig& c) -> auto& { return c.synth.max_segment_seconds; },
                         "longest action segment"));
    e.push_back(real_key("synth", "amplitude",
                         [](RunConfig& c) -> auto& { return c.synth.amplitude; },
                         "distance of action means from the origin"));
    e.push_back(real_key("synth", "background_noise",
                         [](RunConfig& c) -> auto& { return c.synth.background_noise; },
                         "noise std on background frames"));
    e.push_back(real_key("synth", "action_noise",
                         [](RunConfig& c) -> auto& { return c.synth.action_noise; },
                         "noise std on action frames"));
    e.push_back(real_key("synth", "temporal_correlation",
                         [](RunConfig& c) -> auto& { return c.synth.temporal_correlation; },
                         "lag-one correlation of frame noise"));
    e.push_back({{"run", "seed", false, "seed for data generation and training"},
                 [](RunConfig& c, const std::string& v) {
                   c.synth.seed = parse_uint(v, "seed");
                   c.train.seed = c.synth.seed;
                 }});

    e.push_back(size_key("model", "hidden_dim",
                         [](RunConfig& c) -> auto& { return c.model.hidden_dim; },
                         "hidden units per head (0: feature_dim)"));
    e.push_back(real_key("model", "dropout_rate",
                         [](RunConfig& c) -> auto& { return c.model.dropout_rate; },
                         "dropout on input features while training"));
    e.push_back(real_key("model", "epsilon_std",
                         [](RunConfig& c) -> auto& { return c.model.epsilon_std; },
                         "floor for normalization scales"));
    e.push_back({{"model", "norms", false, "complete, none or e.g. zloc+gloc"},
                 [](RunConfig& c, const std::string& v) {
                   try {
                     c.model.norms = parse_norm_set(v);
                   } catch (const std::invalid_argument& ex) {
                     throw ConfigError(std::string("norms: ") + ex.what());
                   }
                 }});

    e.push_back(size_key("train", "epochs", [](RunConfig& c) -> auto& { return c.train.epochs; },
                         "training epochs"));
    e.push_back(size_key("train", "batch_size",
                         [](RunConfig& c) -> auto& { return c.train.batch_size; },
                         "videos per optimizer step"));
    e.push_back(size_key("train", "sub_batches",
                         [](RunConfig& c) -> auto& { return c.train.sub_batches; },
                         "gradient-accumulation groups per batch"));
    e.push_back(real_key("train", "learning_rate",
                         [](RunConfig& c) -> auto& { return c.train.learning_rate; },
                         "SGD learning rate"));
    e.push_back(real_key("train", "momentum",
                         [](RunConfig& c) -> auto& { return c.train.momentum; }, "SGD momentum"));
    e.push_back(real_key("train", "weight_decay",
                         [](RunConfig& c) -> auto& { return c.train.weight_decay; },
                         "L2 weight decay"));
    e.push_back(size_key("train", "temporal_stride",
                         [](RunConfig& c) -> auto& { return c.train.temporal_stride; },
                         "keep every n-th frame while training"));
    e.push_back(size_key("train", "max_start_offset",
                         [](RunConfig& c) -> auto& { return c.train.max_start_offset; },
                         "largest random start offset"));
    e.push_back({{"train", "mode", false, "naive, wsgn or supervised"},
                 [](RunConfig& c, const std::string& v) {
                   try {
                     c.train.mode = parse_objective(v);
                   } catch (const std::invalid_argument& ex) {
                     throw ConfigError(std::string("mode: ") + ex.what());
                   }
                 }});

    e.push_back(real_key("detect", "score_threshold",
                         [](RunConfig& c) -> auto& { return c.detect.score_threshold; },
                         "fused score a frame must exceed"));
    e.push_back(real_key("detect", "min_duration",
                         [](RunConfig& c) -> auto& { return c.detect.min_duration; },
                         "seconds a detection must exceed"));
    e.push_back(size_key("detect", "num_timepoints",
                         [](RunConfig& c) -> auto& { return c.num_timepoints; },
                         "equally spaced timepoints per video"));

    e.push_back(path_key("out", [](RunConfig& c) -> auto& { return c.out; }, "output directory"));
    e.push_back(path_key("data", [](RunConfig& c) -> auto& { return c.data; },
                         "directory holding train/test manifests (default: out)"));
    e.push_back(path_key("checkpoint", [](RunConfig& c) -> auto& { return c.checkpoint; },
                         "checkpoint file (default: out/model.ckpt)"));
    e.push_back(path_key("resume", [](RunConfig& c) -> auto& { return c.resume; },
                         "checkpoint to continue training from"));
    e.push_back(path_key("manifest", [](RunConfig& c) -> auto& { return c.manifest; },
                         "evaluation manifest (default: data/test.manifest)"));
    e.push_back(path_key("detections", [](RunConfig& c) -> auto& { return c.detections; },
                         "detection file (default: out/detections.csv)"));
    e.push_back(path_key("timepoints_file",
                         [](RunConfig& c) -> auto& { return c.timepoints_file; },
                         "timepoint score file (default: out/timepoints.csv)"));
    e.push_back({{"run", "thresholds", false, "comma-separated IoU thresholds"},
                 [](RunConfig& c, const std::string& v) {
                   c.thresholds = as_list(v, "thresholds");
                 }});
    e.push_back(flag_key("localization", [](RunConfig& c) -> auto& { return c.localization; },
                         "eval: timepoint localization mAP instead of detection mAP"));
    e.push_back(flag_key("dump_components",
                         [](RunConfig& c) -> auto& { return c.dump_components; },
                         "detect: write X, P, Z, L, S, G, F per video"));
    e.push_back(size_key("run", "instances", [](RunConfig& c) -> auto& { return c.instances; },
                         "gradcheck: random instances"));
    e.push_back(real_key("run", "gradcheck_step",
                         [](RunConfig& c) -> auto& { return c.gradcheck_step; },
                         "gradcheck: central-difference step"));
    e.push_back(real_key("run", "gradcheck_tolerance",
                         [](RunConfig& c) -> auto& { return c.gradcheck_tolerance; },
                         "gradcheck: largest accepted relative error"));
    e.push_back(flag_key("break_gradients",
                         [](RunConfig& c) -> auto& { return c.break_gradients; },
                         "gradcheck: corrupt analytic gradients (negative control)"));
    return e;
  }();
  return entries;
}

const KeyEntry* find_key(const std::string& name) {
  for (const KeyEntry& e : registry()) {
    if (e.key.name == name) return &e;
  }
  return nullptr;
}

std::string flag_name(const std::string& key) {
  std::string f = key;
  std::replace(f.begin(), f.end(), '_', '-');
  return "--" + f;
}

std::string fixed6(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string threshold_label(double t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", t);
  return buf;
}

// Model dimensions always follow the data.
ModelConfig model_for(const RunConfig& config, const Dataset& data) {
  ModelConfig m = config.model;
  m.num_classes = data.num_classes;
  m.feature_dim = data.videos.empty() ? config.synth.feature_dim
                                      : data.videos.front().features.cols();
  return m;
}

Dataset load_split(const std::filesystem::path& manifest, std::ostream& log) {
  std::vector<std::string> warnings;
  Dataset d = load_dataset(manifest, &warnings);
  for (const std::string& w : warnings) log << "warning: " << manifest.string() << ": " << w << "\n";
  return d;
}

std::size_t count_segments(const Dataset& d) {
  std::size_t n = 0;
  for (const FeatureSequence& v : d.videos) n += v.segments.size();
  return n;
}

void check_resumable(const Checkpoint& ckpt, const ModelConfig& model, const TrainConfig& train) {
  auto mismatch = [](const std::string& field) {
    throw ConfigError("resume: checkpoint was trained with a different " + field);
  };
  const ModelConfig& m = ckpt.model;
  if (m.feature_dim != model.feature_dim) mismatch("feature_dim");
  if (m.num_classes != model.num_classes) mismatch("num_classes");
  if (m.hidden() != model.hidden()) mismatch("hidden_dim");
  if (m.dropout_rate != model.dropout_rate) mismatch("dropout_rate");
  if (!(m.norms == model.norms)) mismatch("norms");
  if (m.epsilon_std != model.epsilon_std) mismatch("epsilon_std");
  const TrainConfig& t = ckpt.train;
  if (t.batch_size != train.batch_size) mismatch("batch_size");
  if (t.sub_batches != train.sub_batches) mismatch("sub_batches");
  if (t.learning_rate != train.learning_rate) mismatch("learning_rate");
  if (t.momentum != train.momentum) mismatch("momentum");
  if (t.weight_decay != train.weight_decay) mismatch("weight_decay");
  if (t.temporal_stride != train.temporal_stride) mismatch("temporal_stride");
  if (t.max_start_offset != train.max_start_offset) mismatch("max_start_offset");
  if (t.mode != train.mode) mismatch("mode");
  if (t.seed != train.seed) mismatch("seed");
  if (ckpt.state.epoch > train.epochs) {
    throw ConfigError("resume: checkpoint already has " + std::to_string(ckpt.state.epoch) +
                      " epochs, more than epochs=" + std::to_string(train.epochs));
  }
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> f;
  std::istringstream ls(line);
  std::string item;
  while (std::getline(ls, item, ',')) f.push_back(item);
  if (!line.empty() && line.back() == ',') f.emplace_back();
  return f;
}

Rng instance_rng(std::uint64_t seed, std::size_t instance) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32), 0x6c8eu,
                    static_cast<std::uint32_t>(instance)};
  return Rng(seq);
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const KeyEntry& e : registry()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

void set_option(RunConfig& config, const std::string& key, const std::string& value) {
  const KeyEntry* e = find_key(key);
  if (!e) throw ConfigError("unknown option '" + key + "'");
  try {
    e->set(config, value);
  } catch (const ValidationError& ex) {
    throw ConfigError(ex.what());
  }
}

void apply_config_text(RunConfig& config, const std::string& text, const std::string& source) {
  std::vector<Record> records;
  try {
    records = parse_records(text);
  } catch (const std::exception& ex) {
    throw ConfigError(source + ": " + ex.what());
  }
  for (const Record& r : records) {
    for (const auto& [key, value] : r.fields) {
      const KeyEntry* e = find_key(key);
      if (!e) throw ConfigError(source + ": unknown option '" + key + "'");
      if (e->key.section != r.type) {
        throw ConfigError(source + ": option '" + key + "' belongs in a '" + e->key.section +
                          "' record, not '" + r.type + "'");
      }
      try {
        e->set(config, value);
      } catch (const std::exception& ex) {
        throw ConfigError(source + ": " + ex.what());
      }
    }
  }
}

Evaluation evaluate_inference(const Dataset& data, const std::vector<VideoInference>& inference,
                              const DetectorConfig& detect, std::size_t num_timepoints) {
  if (inference.size() != data.videos.size()) {
    throw DimensionError("evaluate_inference: " + std::to_string(inference.size()) +
                         " inference results for " + std::to_string(data.videos.size()) +
                         " videos");
  }
  Evaluation e;
  std::vector<Detection> raw;
  for (std::size_t i = 0; i < inference.size(); ++i) {
    const FeatureSequence& v = data.videos[i];
    DetectorConfig dc = detect;
    dc.fps = v.fps;
    for (const Segment& s : extract_segments(inference[i].fused, dc)) raw.push_back({v.id, s});
    LocVideo lv;
    lv.video_id = v.id;
    lv.scores = score_timepoints(inference[i].fused, num_timepoints);
    lv.frame_index = sample_timepoints(v.frames(), num_timepoints);
    lv.fps = v.fps;
    for (const FrameSegment& g : v.segments) {
      const Segment s = g.to_seconds(v.fps);
      lv.gts.push_back(s);
      e.ground_truth.push_back({v.id, s});
    }
    e.timepoints.push_back(std::move(lv));
  }
  // Score exactly what a detection file would carry.
  e.detections = parse_detections(format_detections(raw), "detections");
  return e;
}

std::string format_timepoints(const std::vector<LocVideo>& videos, std::size_t num_classes) {
  std::string text = "video_id,frame_index";
  for (std::size_t q = 0; q < num_classes; ++q) text += ",class_" + std::to_string(q);
  text += "\n";
  for (const LocVideo& v : videos) {
    if (v.scores.cols() != num_classes || v.scores.rows() != v.frame_index.size()) {
      throw DimensionError("format_timepoints: video " + v.video_id + " has scores " +
                           v.scores.shape_string());
    }
    for (std::size_t k = 0; k < v.scores.rows(); ++k) {
      text += v.video_id + "," + std::to_string(v.frame_index[k]);
      for (double s : v.scores.row(k)) text += "," + format_double(s);
      text += "\n";
    }
  }
  return text;
}

std::vector<LocVideo> parse_timepoints(const std::string& text, const std::string& source,
                                       const Dataset& data) {
  const std::size_t C = data.num_classes;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < data.videos.size(); ++i) index[data.videos[i].id] = i;
  std::vector<std::vector<std::size_t>> frames(data.videos.size());
  std::vector<std::vector<double>> scores(data.videos.size());

  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#' || line.rfind("video_id,", 0) == 0) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const std::vector<std::string> f = split_csv(line);
    if (f.size() != C + 2) {
      throw FormatError(where + ": expected " + std::to_string(C + 2) + " fields, found " +
                        std::to_string(f.size()));
    }
    auto it = index.find(f[0]);
    if (it == index.end()) throw FormatError(where + ": video '" + f[0] + "' is not in the manifest");
    frames[it->second].push_back(static_cast<std::size_t>(parse_uint(f[1], where)));
    for (std::size_t q = 0; q < C; ++q) scores[it->second].push_back(parse_double(f[q + 2], where));
  }

  std::vector<LocVideo> out;
  for (std::size_t i = 0; i < data.videos.size(); ++i) {
    const FeatureSequence& v = data.videos[i];
    if (frames[i].empty()) throw FormatError(source + ": no timepoints for video " + v.id);
    LocVideo lv;
    lv.video_id = v.id;
    lv.frame_index = frames[i];
    lv.scores = Matrix(frames[i].size(), C);
    std::copy(scores[i].begin(), scores[i].end(), lv.scores.values().begin());
    lv.fps = v.fps;
    for (const FrameSegment& g : v.segments) lv.gts.push_back(g.to_seconds(v.fps));
    out.push_back(std::move(lv));
  }
  return out;
}

const AblationRow& AblationResult::row(const std::string& name) const {
  for (const AblationRow& r : rows) {
    if (r.name == name) return r;
  }
  throw std::out_of_range("ablation has no row '" + name + "'");
}

AblationResult run_ablation(const RunConfig& config, std::ostream& log) {
  Dataset train_data, test_data;
  if (config.data.empty()) {
    SplitPair pair = generate(config.synth);
    train_data = std::move(pair.train);
    test_data = std::move(pair.test);
  } else {
    train_data = load_split(config.data / "train.manifest", log);
    test_data = load_split(config.data / "test.manifest", log);
  }

  struct Variant {
    const char* name;
    Objective objective;
    const char* norms;
  };
  static const Variant variants[] = {
      {"naive", Objective::naive, "complete"},
      {"wsgn-sloc", Objective::wsgn, "sloc"},
      {"wsgn-zloc", Objective::wsgn, "zloc"},
      {"wsgn-gloc", Objective::wsgn, "gloc"},
      {"wsgn-sloc+gloc", Objective::wsgn, "sloc+gloc"},
      {"wsgn-zloc+gloc", Objective::wsgn, "zloc+gloc"},
      {"wsgn-complete", Objective::wsgn, "complete"},
      {"supervised", Objective::supervised, "complete"},
  };

  AblationResult result;
  result.thresholds = config.thresholds;
  for (const Variant& v : variants) {
    ModelConfig model = model_for(config, train_data);
    model.norms = parse_norm_set(v.norms);
    TrainConfig tc = config.train;
    tc.mode = v.objective;
    log << "ablate: training " << v.name << "\n";
    const TrainState state = train(train_data, model, tc);
    const Evaluation e = evaluate_inference(
        test_data, infer(test_data, state.params, model, v.objective), config.detect,
        config.num_timepoints);
    AblationRow row;
    row.name = v.name;
    row.objective = v.objective;
    row.norms = model.norms;
    row.detection_map =
        detection_map(e.detections, e.ground_truth, config.thresholds, test_data.num_classes).map;
    row.localization_map = localization_map(e.timepoints, test_data.num_classes).map;
    row.final_loss = state.loss_curve.empty() ? 0.0 : state.loss_curve.back();
    result.rows.push_back(std::move(row));
  }
  return result;
}

std::string format_ablation(const AblationResult& result) {
  std::string text = "variant";
  for (double t : result.thresholds) text += "," + threshold_label(t);
  text += ",localization\n";
  auto emit = [&](const std::string& name, const std::vector<double>& det, double loc) {
    text += name;
    for (double m : det) text += "," + fixed6(m);
    text += "," + fixed6(loc) + "\n";
  };
  for (const AblationRow& r : result.rows) emit(r.name, r.detection_map, r.localization_map);
  auto difference = [&](const std::string& name, const std::string& a, const std::string& b) {
    const AblationRow& x = result.row(a);
    const AblationRow& y = result.row(b);
    std::vector<double> d(x.detection_map.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = x.detection_map[i] - y.detection_map[i];
    emit(name, d, x.localization_map - y.localization_map);
  };
  difference("gap", "supervised", "wsgn-complete");
  difference("improvement", "wsgn-complete", "naive");
  return text;
}

GradcheckResult run_gradcheck(const RunConfig& config) {
  // ZLoc and SLoc alone are invariant to a per-class shift of X, so det.b2
  // has an identically zero gradient there and the relative error would only
  // measure roundoff against the 1e-8 floor. Every variant below includes
  // GLoc, which breaks that invariance.
  static const struct {
    Objective objective;
    const char* norms;
  } kinds[] = {{Objective::wsgn, "complete"},  {Objective::wsgn, "gloc"},
               {Objective::wsgn, "zloc+gloc"}, {Objective::wsgn, "sloc+gloc"},
               {Objective::naive, "complete"}, {Objective::supervised, "complete"}};
  constexpr std::size_t kKinds = sizeof(kinds) / sizeof(kinds[0]);

  GradcheckResult result;
  std::map<std::string, BlockError> worst;
  for (std::size_t i = 0; i < config.instances; ++i) {
    Rng rng = instance_rng(config.synth.seed, i);
    std::uniform_int_distribution<std::size_t> frames_dist(3, 10);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);

    ModelConfig model;
    model.feature_dim = 4;
    model.num_classes = 3;
    model.hidden_dim = 5;
    model.dropout_rate = 0.0;
    model.norms = parse_norm_set(kinds[i % kKinds].norms);
    const Objective objective = kinds[i % kKinds].objective;

    const std::size_t T = frames_dist(rng);
    Matrix features(T, model.feature_dim);
    for (double& x : features.values()) x = normal(rng);
    std::vector<double> labels(model.num_classes);
    for (double& y : labels) y = uniform(rng) < 0.5 ? 1.0 : 0.0;
    Matrix frame_truth(T, model.num_classes);
    for (double& y : frame_truth.values()) y = uniform(rng) < 0.3 ? 1.0 : 0.0;

    // Redraw until no ReLU input lies within 1e-3 of its kink, far beyond
    // what a probe of size h can move it.
    ModelParams params;
    auto near_kink = [&](const Head& head) {
      const Matrix pre = linear_forward(features, head.w1.value, head.b1.value);
      return std::any_of(pre.values().begin(), pre.values().end(),
                         [](double v) { return std::abs(v) < 1e-3; });
    };
    do {
      params = ModelParams::initialize(model, rng);
      for (ParamBlock* b : {&params.cls.b1, &params.cls.b2, &params.det.b1, &params.det.b2}) {
        for (double& x : b->value.values()) x = 0.1 * normal(rng);
      }
    } while (near_kink(params.cls) || near_kink(params.det));
    for (double& x : params.global_mean.value.values()) x = 0.5 * normal(rng);
    for (double& x : params.global_scale.value.values()) x = 0.5 + uniform(rng);

    params.zero_grad();
    switch (objective) {
      case Objective::naive:
        naive_forward_backward(features, labels, params, model, Phase::eval, rng);
        break;
      case Objective::wsgn:
        weak_forward_backward(features, labels, params, model, Phase::eval, rng);
        break;
      case Objective::supervised:
        supervised_forward_backward(features, labels, frame_truth, params, model, Phase::eval,
                                    rng);
        break;
    }
    if (config.break_gradients) {
      for (ParamBlock* b : params.blocks()) b->grad *= 1.01;
    }
    const Matrix* truth = objective == Objective::supervised ? &frame_truth : nullptr;
    const std::vector<NamedBlock> named = params.named_blocks();
    const GradCheckReport report = grad_check(
        [&] { return objective_loss(features, labels, truth, params, model, objective); }, named,
        config.gradcheck_step);
    for (const BlockError& b : report.blocks) {
      auto [it, inserted] = worst.emplace(b.name, b);
      if (!inserted && b.max_rel_error > it->second.max_rel_error) it->second = b;
    }
    result.max_rel_error = std::max(result.max_rel_error, report.max_rel_error);
  }
  for (const std::string& name : ModelParams::block_names()) {
    auto it = worst.find(name);
    if (it != worst.end()) result.blocks.push_back(it->second);
  }
  result.passed = config.instances > 0 && result.max_rel_error < config.gradcheck_tolerance;
  return result;
}

int cmd_gen(const RunConfig& config, std::ostream& out, std::ostream& log) {
  const SplitPair pair = generate(config.synth);
  for (const Dataset* d : {&pair.train, &pair.test}) {
    const std::filesystem::path manifest = save_dataset(config.out, *d);
    // Re-read to validate what was written.
    const Dataset check = load_split(manifest, log);
    std::size_t frames = 0;
    for (const FeatureSequence& v : check.videos) frames += v.frames();
    out << d->split << ": videos=" << check.videos.size() << " classes=" << check.num_classes
        << " segments=" << count_segments(check) << " frames=" << frames
        << " manifest=" << manifest.string() << "\n";
  }
  return 0;
}

int cmd_train(const RunConfig& config, std::ostream& out, std::ostream& log) {
  const Dataset data = load_split(config.data_dir() / "train.manifest", log);
  const ModelConfig model = model_for(config, data);
  std::optional<TrainState> resume;
  if (!config.resume.empty()) {
    Checkpoint ckpt = load_checkpoint(config.resume);
    check_resumable(ckpt, model, config.train);
    resume = std::move(ckpt.state);
  }
  const TrainState state = train(data, model, config.train, std::move(resume),
                                 [&](const TrainState& s) {
                                   log << "epoch " << s.epoch << " loss "
                                       << format_double(s.loss_curve.back()) << "\n";
                                 });
  save_checkpoint(config.checkpoint_path(), Checkpoint{model, config.train, state});
  write_file(config.out / "loss.csv", format_loss_curve(state.loss_curve));
  out << "mode=" << to_string(config.train.mode) << " norms=" << to_string(model.norms)
      << " epochs=" << state.epoch << " final_loss="
      << (state.loss_curve.empty() ? std::string("nan") : format_double(state.loss_curve.back()))
      << " checkpoint=" << config.checkpoint_path().string() << "\n";
  return 0;
}

int cmd_detect(const RunConfig& config, std::ostream& out, std::ostream& log) {
  const Checkpoint ckpt = load_checkpoint(config.checkpoint_path());
  const Dataset data = load_split(config.manifest_path(), log);
  if (data.num_classes != ckpt.model.num_classes) {
    throw ConfigError("detect: manifest has " + std::to_string(data.num_classes) +
                      " classes but the checkpoint expects " +
                      std::to_string(ckpt.model.num_classes));
  }
  const Objective objective = ckpt.train.mode;
  const std::vector<VideoInference> inference = infer(data, ckpt.state.params, ckpt.model, objective);
  const Evaluation e = evaluate_inference(data, inference, config.detect, config.num_timepoints);
  write_detections(config.detections_path(), e.detections);
  write_file(config.timepoints_path(), format_timepoints(e.timepoints, data.num_classes));
  if (config.dump_components) {
    for (const VideoInference& v : inference) {
      const std::filesystem::path dir = config.out / "components" / v.video_id;
      const std::pair<const char*, const Matrix*> parts[] = {
          {"X", &v.X}, {"P", &v.P}, {"Z", &v.Z}, {"L", &v.L},
          {"S", &v.S}, {"G", &v.G}, {"F", &v.fused}};
      for (const auto& [name, m] : parts) {
        if (m->rows() == 0) continue;
        write_features(dir / (std::string(name) + ".wsgnd"), *m, Precision::f64);
      }
    }
  }
  out << "videos=" << data.videos.size() << " detections=" << e.detections.size()
      << " file=" << config.detections_path().string() << "\n";
  return 0;
}

int cmd_eval(const RunConfig& config, std::ostream& out, std::ostream& log) {
  const Dataset data = load_split(config.manifest_path(), log);
  if (config.localization) {
    const std::filesystem::path path = config.timepoints_path();
    const LocReport report =
        localization_map(parse_timepoints(read_file(path), path.string(), data), data.num_classes);
    const std::string text = format_loc_report(report);
    write_file(config.out / "localization.csv", text);
    out << text;
    return 0;
  }
  std::vector<Detection> dets = read_detections(config.detections_path());
  std::map<std::string, bool> known;
  for (const FeatureSequence& v : data.videos) known[v.id] = true;
  for (const Detection& d : dets) {
    if (!known.count(d.video_id)) {
      throw ValidationError("detection for unknown video '" + d.video_id + "'");
    }
    if (d.segment.class_id >= data.num_classes) {
      throw ValidationError("detection class " + std::to_string(d.segment.class_id) +
                            " out of range for " + std::to_string(data.num_classes) + " classes");
    }
  }
  std::vector<Detection> gts;
  for (const FeatureSequence& v : data.videos) {
    for (const FrameSegment& g : v.segments) gts.push_back({v.id, g.to_seconds(v.fps)});
  }
  const std::string text =
      format_eval_report(detection_map(dets, gts, config.thresholds, data.num_classes));
  write_file(config.out / "eval.csv", text);
  out << text;
  return 0;
}

int cmd_ablate(const RunConfig& config, std::ostream& out, std::ostream& log) {
  const std::string text = format_ablation(run_ablation(config, log));
  write_file(config.out / "ablation.csv", text);
  out << text;
  return 0;
}

int cmd_gradcheck(const RunConfig& config, std::ostream& out, std::ostream&) {
  const GradcheckResult r = run_gradcheck(config);
  out << "block,max_rel_error\n";
  for (const BlockError& b : r.blocks) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3e", b.max_rel_error);
    out << b.name << "," << buf << "\n";
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3e", r.max_rel_error);
  out << "max," << buf << "\n" << (r.passed ? "pass" : "fail") << "\n";
  return r.passed ? 0 : 1;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Weakly supervised temporal action localization toolkit", "wsgn"};
  app.require_subcommand(1);
  // A repeated option takes its last value, so later flags override earlier ones.
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  using Command = int (*)(const RunConfig&, std::ostream&, std::ostream&);
  const std::pair<const char*, const char*> names[] = {
      {"gen", "generate the synthetic benchmark"},
      {"train", "train a model and write a checkpoint"},
      {"detect", "run a checkpoint on a manifest and write detections"},
      {"eval", "score detections or timepoints against a manifest"},
      {"ablate", "train and evaluate every model variant"},
      {"gradcheck", "compare analytic and numerical gradients"}};
  const Command commands[] = {cmd_gen, cmd_train, cmd_detect, cmd_eval, cmd_ablate, cmd_gradcheck};

  const std::vector<ConfigKey>& keys = config_keys();
  struct Bound {
    CLI::App* app;
    std::string config_file;
    std::vector<std::string> values;
    std::vector<CLI::Option*> options;
  };
  std::vector<Bound> bound(std::size(names));
  for (std::size_t c = 0; c < std::size(names); ++c) {
    Bound& b = bound[c];
    b.app = app.add_subcommand(names[c].first, names[c].second);
    b.app->add_option("--config", b.config_file, "config file of records, e.g. 'train epochs=40'");
    b.values.resize(keys.size());
    for (std::size_t k = 0; k < keys.size(); ++k) {
      if (keys[k].is_flag) {
        b.options.push_back(b.app->add_flag(flag_name(keys[k].name), keys[k].help));
      } else {
        b.options.push_back(b.app->add_option(flag_name(keys[k].name), b.values[k], keys[k].help));
      }
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    for (std::size_t c = 0; c < bound.size(); ++c) {
      const Bound& b = bound[c];
      if (!b.app->parsed()) continue;
      RunConfig config;
      if (!b.config_file.empty()) apply_config_text(config, read_file(b.config_file), b.config_file);
      for (std::size_t k = 0; k < keys.size(); ++k) {
        if (b.options[k]->count() == 0) continue;
        set_option(config, keys[k].name, keys[k].is_flag ? "true" : b.values[k]);
      }
      config.synth.validate();
      config.model.validate();
      config.train.validate();
      config.detect.validate();
      return commands[c](config, out, err);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace wsgn
