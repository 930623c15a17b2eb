#pragma once

// Command-line front end: gen, train, detect, eval, ablate, gradcheck. Every
// command is also callable in-process with a resolved RunConfig.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "wsgn/datagen.h"
#include "wsgn/detector.h"
#include "wsgn/evaluator.h"
#include "wsgn/model.h"
#include "wsgn/trainer.h"

namespace wsgn {

struct RunConfig {
  SynthConfig synth;
  ModelConfig model;
  TrainConfig train;
  DetectorConfig detect;
  std::size_t num_timepoints = 25;

  std::filesystem::path out = "wsgn_out";
  std::filesystem::path data;             // empty: same as out
  std::filesystem::path checkpoint;       // empty: <out>/model.ckpt
  std::filesystem::path resume;           // train only; empty: fresh run
  std::filesystem::path manifest;         // empty: <data>/test.manifest
  std::filesystem::path detections;       // empty: <out>/detections.csv
  std::filesystem::path timepoints_file;  // empty: <out>/timepoints.csv
  std::vector<double> thresholds = {0.1, 0.2, 0.3, 0.4, 0.5};
  bool localization = false;
  bool dump_components = false;

  std::size_t instances = 50;
  double gradcheck_step = 1e-5;
  double gradcheck_tolerance = 1e-4;
  bool break_gradients = false;

  std::filesystem::path data_dir() const;
  std::filesystem::path checkpoint_path() const;
  std::filesystem::path manifest_path() const;
  std::filesystem::path detections_path() const;
  std::filesystem::path timepoints_path() const;
};

struct ConfigKey {
  std::string section;  // record type in config files
  std::string name;     // record key; the flag is --name with '-' for '_'
  bool is_flag = false;
  std::string help;
};

const std::vector<ConfigKey>& config_keys();

// Throws ConfigError for unknown keys or unparsable values. "seed" sets both
// the synthetic-data and the training seed.
void set_option(RunConfig& config, const std::string& key, const std::string& value);

// Records such as "train epochs=40 mode=naive"; the record type must be the
// key's section.
void apply_config_text(RunConfig& config, const std::string& text, const std::string& source);

// Fused-score post-processing shared by detect and ablate.
struct Evaluation {
  std::vector<Detection> detections;  // after the detection-file rounding
  std::vector<Detection> ground_truth;
  std::vector<LocVideo> timepoints;
};

Evaluation evaluate_inference(const Dataset& data, const std::vector<VideoInference>& inference,
                              const DetectorConfig& detect, std::size_t num_timepoints);

// "video_id,frame_index,class_0,...": one row per sampled timepoint.
std::string format_timepoints(const std::vector<LocVideo>& videos, std::size_t num_classes);
// Ground truth is filled from `data`; every video must be present.
std::vector<LocVideo> parse_timepoints(const std::string& text, const std::string& source,
                                       const Dataset& data);

struct AblationRow {
  std::string name;
  Objective objective = Objective::wsgn;
  NormSet norms;
  std::vector<double> detection_map;  // per threshold
  double localization_map = 0.0;
  double final_loss = 0.0;
};

struct AblationResult {
  std::vector<double> thresholds;
  std::vector<AblationRow> rows;

  const AblationRow& row(const std::string& name) const;
};

AblationResult run_ablation(const RunConfig& config, std::ostream& log);
// Variant rows, then "gap" (supervised - complete) and "improvement"
// (complete - naive).
std::string format_ablation(const AblationResult& result);

struct GradcheckResult {
  std::vector<BlockError> blocks;  // worst error per block over all instances
  double max_rel_error = 0.0;
  bool passed = false;
};

GradcheckResult run_gradcheck(const RunConfig& config);

// Each returns the process exit code; errors propagate as exceptions.
int cmd_gen(const RunConfig& config, std::ostream& out, std::ostream& log);
int cmd_train(const RunConfig& config, std::ostream& out, std::ostream& log);
int cmd_detect(const RunConfig& config, std::ostream& out, std::ostream& log);
int cmd_eval(const RunConfig& config, std::ostream& out, std::ostream& log);
int cmd_ablate(const RunConfig& config, std::ostream& out, std::ostream& log);
int cmd_gradcheck(const RunConfig& config, std::ostream& out, std::ostream& log);

// Parses argv (argv[0] is the program name), dispatches and maps exceptions
// to a message on `err` and exit code 1.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace wsgn
