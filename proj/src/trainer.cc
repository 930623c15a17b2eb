#include "wsgn/trainer.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "wsgn/formats.h"

namespace wsgn {

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (sub_batches == 0) throw std::invalid_argument("sub_batches must be positive");
  if (temporal_stride == 0) throw std::invalid_argument("temporal_stride must be at least 1");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be nonnegative");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("momentum must lie in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be nonnegative");
}

FeatureSequence subsample(const FeatureSequence& video, std::size_t stride, std::size_t offset) {
  if (stride == 0) throw std::invalid_argument("subsample: stride must be at least 1");
  const std::size_t T = video.frames();
  if (T == 0) throw DimensionError("subsample: video " + video.id + " has no frames");
  offset = std::min(offset, T - 1);
  const std::size_t kept = (T - offset + stride - 1) / stride;
  FeatureSequence out;
  out.id = video.id;
  out.feature_path = video.feature_path;
  out.labels = video.labels;
  out.fps = video.fps / static_cast<double>(stride);
  out.features = Matrix(kept, video.features.cols());
  for (std::size_t k = 0; k < kept; ++k) {
    auto src = video.features.row(offset + k * stride);
    std::copy(src.begin(), src.end(), out.features.row(k).begin());
  }
  // Original frame f maps to k when f == offset + k * stride; a segment
  // [s, e) keeps the k with s <= offset + k * stride < e.
  auto first_kept_at_or_after = [&](std::size_t f) -> std::size_t {
    if (f <= offset) return 0;
    return (f - offset + stride - 1) / stride;
  };
  for (const FrameSegment& s : video.segments) {
    const std::size_t a = std::min(first_kept_at_or_after(s.start_frame), kept);
    const std::size_t b = std::min(first_kept_at_or_after(s.end_frame), kept);
    if (b > a) out.segments.push_back({s.class_id, a, b});
  }
  return out;
}

namespace {

Rng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(a),
                    static_cast<std::uint32_t>(b)};
  return Rng(seq);
}

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kEpochStream = 0xe90c;

}  // namespace

TrainState initial_state(const ModelConfig& model, const TrainConfig& train) {
  Rng rng = stream(train.seed, kInitStream, 0);
  TrainState s;
  s.params = ModelParams::initialize(model, rng);
  return s;
}

TrainState train(const Dataset& dataset, const ModelConfig& model, const TrainConfig& cfg,
                 std::optional<TrainState> resume, const EpochCallback& on_epoch) {
  model.validate();
  cfg.validate();
  if (dataset.videos.empty()) throw std::invalid_argument("train: dataset is empty");
  if (cfg.mode == Objective::supervised) {
    for (const FeatureSequence& v : dataset.videos) {
      const bool labelled = std::any_of(v.labels.begin(), v.labels.end(),
                                        [](double y) { return y != 0.0; });
      if (labelled && v.segments.empty()) {
        throw std::invalid_argument("supervised training needs ground-truth segments; video " +
                                    v.id + " has none");
      }
    }
  }

  TrainState state = resume ? std::move(*resume) : initial_state(model, cfg);
  Sgd sgd(SgdConfig{cfg.learning_rate, cfg.momentum, cfg.weight_decay});
  sgd.velocity() = state.velocity;
  std::vector<ParamBlock*> blocks = state.params.blocks();
  state.params.zero_grad();

  std::vector<Matrix> batch_grad, sub_grad;
  for (ParamBlock* b : blocks) batch_grad.emplace_back(b->value.rows(), b->value.cols());

  const std::size_t n = dataset.videos.size();
  for (std::size_t epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    Rng rng = stream(cfg.seed, kEpochStream, epoch);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::uniform_int_distribution<std::size_t> offset_dist(0, cfg.max_start_offset);

    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      const std::size_t count = end - begin;
      const std::size_t groups = std::min(cfg.sub_batches, count);
      for (Matrix& g : batch_grad) g.fill(0.0);
      // Partition [begin, end) into `groups` contiguous slices of near-equal size.
      for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t lo = begin + count * g / groups;
        const std::size_t hi = begin + count * (g + 1) / groups;
        for (std::size_t i = lo; i < hi; ++i) {
          const FeatureSequence& full = dataset.videos[order[i]];
          const FeatureSequence v = subsample(full, cfg.temporal_stride, offset_dist(rng));
          StepResult r;
          switch (cfg.mode) {
            case Objective::naive:
              r = naive_forward_backward(v.features, v.labels, state.params, model,
                                         Phase::train, rng);
              break;
            case Objective::wsgn:
              r = weak_forward_backward(v.features, v.labels, state.params, model,
                                        Phase::train, rng);
              break;
            case Objective::supervised:
              r = supervised_forward_backward(
                  v.features, v.labels, frame_labels(v.segments, v.frames(), model.num_classes),
                  state.params, model, Phase::train, rng);
              break;
          }
          if (!std::isfinite(r.loss)) {
            throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                               ", batch " + std::to_string(batch_index) + ", video " + full.id);
          }
          epoch_loss += r.loss;
        }
        for (std::size_t k = 0; k < blocks.size(); ++k) {
          batch_grad[k] += blocks[k]->grad;
          blocks[k]->zero_grad();
        }
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (std::size_t k = 0; k < blocks.size(); ++k) {
        blocks[k]->grad = batch_grad[k];
        blocks[k]->grad *= inv;
      }
      sgd.step(blocks);
    }
    state.epoch = epoch + 1;
    state.loss_curve.push_back(epoch_loss / static_cast<double>(n));
    state.velocity = sgd.velocity();
    if (on_epoch) on_epoch(state);
  }
  state.velocity = sgd.velocity();
  return state;
}

std::vector<VideoInference> infer(const Dataset& dataset, const ModelParams& params,
                                  const ModelConfig& model, Objective objective) {
  std::vector<VideoInference> out;
  out.reserve(dataset.videos.size());
  Rng unused(0);
  for (const FeatureSequence& v : dataset.videos) {
    ForwardTrace tr = forward(v.features, params, model, objective, Phase::eval, unused);
    VideoInference r;
    r.video_id = v.id;
    r.fused = frame_scores(tr.P, tr.G);
    r.X = std::move(tr.X);
    r.P = std::move(tr.P);
    r.Z = std::move(tr.Z);
    r.L = std::move(tr.L);
    r.S = std::move(tr.S);
    r.G = std::move(tr.G);
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

constexpr char kCheckpointMagic[] = "# wsgn checkpoint v1";

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const ModelConfig& m = ckpt.model;
  const TrainConfig& t = ckpt.train;
  const TrainState& s = ckpt.state;
  std::string index = std::string(kCheckpointMagic) + "\n";
  Record head{"checkpoint", {}};
  head.set("epoch", std::to_string(s.epoch));
  head.set("running_loss", s.loss_curve.empty() ? "nan" : format_double(s.loss_curve.back()));
  head.set("mode", to_string(t.mode));
  head.set("norms", to_string(m.norms));
  head.set("feature_dim", std::to_string(m.feature_dim));
  head.set("num_classes", std::to_string(m.num_classes));
  head.set("hidden_dim", std::to_string(m.hidden()));
  head.set("dropout_rate", format_double(m.dropout_rate));
  head.set("epsilon_std", format_double(m.epsilon_std));
  // Epoch generators are derived from (seed, epoch), so this pair is the
  // complete random state.
  head.set("rng", "seed:" + std::to_string(t.seed) + ",epoch:" + std::to_string(s.epoch));
  head.set("seed", std::to_string(t.seed));
  head.set("learning_rate", format_double(t.learning_rate));
  head.set("momentum", format_double(t.momentum));
  head.set("weight_decay", format_double(t.weight_decay));
  head.set("batch_size", std::to_string(t.batch_size));
  head.set("sub_batches", std::to_string(t.sub_batches));
  head.set("temporal_stride", std::to_string(t.temporal_stride));
  head.set("max_start_offset", std::to_string(t.max_start_offset));
  head.set("epochs", std::to_string(t.epochs));
  index += format_record(head) + '\n';
  for (std::size_t e = 0; e < s.loss_curve.size(); ++e) {
    index += format_record(Record{"loss", {{"epoch", std::to_string(e + 1)},
                                           {"value", format_double(s.loss_curve[e])}}}) + '\n';
  }

  std::string payload;
  const std::vector<std::string> names = ModelParams::block_names();
  const std::vector<const ParamBlock*> values = s.params.blocks();
  auto add = [&](const char* type, const std::string& name, const Matrix& mat) {
    Record r{type, {}};
    r.set("name", name);
    r.set("rows", std::to_string(mat.rows()));
    r.set("cols", std::to_string(mat.cols()));
    r.set("offset", std::to_string(payload.size()));
    index += format_record(r) + '\n';
    payload += encode_matrix(mat, Precision::f64);
  };
  for (std::size_t i = 0; i < values.size(); ++i) add("block", names[i], values[i]->value);
  for (std::size_t i = 0; i < s.velocity.size(); ++i) add("velocity", names[i], s.velocity[i]);
  index += "end\n";
  write_file(path, index + payload);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.rfind(kCheckpointMagic, 0) != 0) {
    throw FormatError(path.string() + ": not a checkpoint (bad magic at offset 0)");
  }
  const std::size_t end_at = bytes.find("\nend\n");
  if (end_at == std::string::npos) throw FormatError(path.string() + ": missing index terminator");
  const std::size_t payload_at = end_at + 5;
  const std::vector<Record> records = parse_records(bytes.substr(0, end_at + 1));

  Checkpoint c;
  bool have_head = false;
  std::vector<std::pair<std::string, Matrix>> blocks, velocity;
  for (const Record& r : records) {
    if (r.type == "checkpoint") {
      have_head = true;
      c.state.epoch = parse_uint(r.at("epoch"), "epoch");
      c.train.mode = parse_objective(r.at("mode"));
      c.model.norms = parse_norm_set(r.at("norms"));
      c.model.feature_dim = parse_uint(r.at("feature_dim"), "feature_dim");
      c.model.num_classes = parse_uint(r.at("num_classes"), "num_classes");
      c.model.hidden_dim = parse_uint(r.at("hidden_dim"), "hidden_dim");
      c.model.dropout_rate = parse_double(r.at("dropout_rate"), "dropout_rate");
      c.model.epsilon_std = parse_double(r.at("epsilon_std"), "epsilon_std");
      c.train.seed = parse_uint(r.at("seed"), "seed");
      c.train.learning_rate = parse_double(r.at("learning_rate"), "learning_rate");
      c.train.momentum = parse_double(r.at("momentum"), "momentum");
      c.train.weight_decay = parse_double(r.at("weight_decay"), "weight_decay");
      c.train.batch_size = parse_uint(r.at("batch_size"), "batch_size");
      c.train.sub_batches = parse_uint(r.at("sub_batches"), "sub_batches");
      c.train.temporal_stride = parse_uint(r.at("temporal_stride"), "temporal_stride");
      c.train.max_start_offset = parse_uint(r.at("max_start_offset"), "max_start_offset");
      c.train.epochs = parse_uint(r.at("epochs"), "epochs");
    } else if (r.type == "loss") {
      c.state.loss_curve.push_back(parse_double(r.at("value"), "loss value"));
    } else if (r.type == "block" || r.type == "velocity") {
      std::size_t offset = payload_at + parse_uint(r.at("offset"), "offset");
      if (offset > bytes.size()) {
        throw FormatError(path.string() + ": block " + r.at("name") + " offset " +
                          std::to_string(offset) + " beyond end of file");
      }
      Matrix m = decode_matrix(bytes, offset);
      if (m.rows() != parse_uint(r.at("rows"), "rows") ||
          m.cols() != parse_uint(r.at("cols"), "cols")) {
        throw FormatError(path.string() + ": block " + r.at("name") + " shape mismatch");
      }
      (r.type == "block" ? blocks : velocity).emplace_back(r.at("name"), std::move(m));
    } else {
      throw FormatError(path.string() + ": unknown record '" + r.type + "'");
    }
  }
  if (!have_head) throw FormatError(path.string() + ": missing checkpoint header");
  c.state.params = ModelParams::zeros(c.model);
  std::vector<NamedBlock> named = c.state.params.named_blocks();
  if (blocks.size() != named.size()) {
    throw FormatError(path.string() + ": expected " + std::to_string(named.size()) +
                      " parameter blocks, found " + std::to_string(blocks.size()));
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    if (blocks[i].first != named[i].name) {
      throw FormatError(path.string() + ": unexpected block '" + blocks[i].first + "'");
    }
    require_same_shape(named[i].block->value, blocks[i].second, "checkpoint block");
    named[i].block->value = std::move(blocks[i].second);
  }
  for (auto& [name, m] : velocity) c.state.velocity.push_back(std::move(m));
  if (!c.state.velocity.empty() && c.state.velocity.size() != named.size()) {
    throw FormatError(path.string() + ": velocity buffer count mismatch");
  }
  return c;
}

std::string format_loss_curve(const std::vector<double>& curve) {
  std::string out = "epoch,loss\n";
  for (std::size_t e = 0; e < curve.size(); ++e) {
    out += std::to_string(e + 1) + ',' + format_double(curve[e]) + '\n';
  }
  return out;
}

}  // namespace wsgn
