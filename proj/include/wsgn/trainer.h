#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "wsgn/datagen.h"
#include "wsgn/diffcore.h"
#include "wsgn/model.h"

namespace wsgn {

struct TrainConfig {
  std::size_t epochs = 80;
  std::size_t batch_size = 128;  // videos per optimizer step
  std::size_t sub_batches = 32;  // gradient-accumulation groups per batch
  double learning_rate = 0.5;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::size_t temporal_stride = 5;
  std::size_t max_start_offset = 15;
  Objective mode = Objective::wsgn;
  std::uint64_t seed = 0;

  void validate() const;
};

// Frames offset, offset + stride, ...; offset is clamped to T - 1. Segments
// are remapped onto the kept frames and dropped when no frame survives.
FeatureSequence subsample(const FeatureSequence& video, std::size_t stride, std::size_t offset);

struct TrainState {
  ModelParams params;
  std::vector<Matrix> velocity;  // empty before the first step
  std::size_t epoch = 0;         // completed epochs
  std::vector<double> loss_curve;
};

TrainState initial_state(const ModelConfig& model, const TrainConfig& train);

// Called after every epoch with the state so far.
using EpochCallback = std::function<void(const TrainState&)>;

// Runs epochs state.epoch .. train.epochs - 1. Each epoch shuffles the videos
// with a generator seeded by (seed, epoch), so resuming from a saved state
// continues exactly as an uninterrupted run would.
TrainState train(const Dataset& dataset, const ModelConfig& model, const TrainConfig& train,
                 std::optional<TrainState> resume = std::nullopt,
                 const EpochCallback& on_epoch = {});

struct VideoInference {
  std::string video_id;
  Matrix X, P, Z, L, S, G;
  Matrix fused;  // G (.) P
};

// Eval-mode forward on full-length videos. For naive and supervised models G
// is all ones and X, Z, L, S are empty.
std::vector<VideoInference> infer(const Dataset& dataset, const ModelParams& params,
                                  const ModelConfig& model, Objective objective);

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  TrainState state;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// "epoch,loss" lines, one per completed epoch.
std::string format_loss_curve(const std::vector<double>& curve);

}  // namespace wsgn
