#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <limits>

#include "test_util.h"
#include "wsgn/formats.h"
#include "wsgn/trainer.h"

using namespace wsgn;

namespace {

Dataset small_data(std::size_t videos = 24, std::uint64_t seed = 0) {
  SynthConfig c;
  c.train_videos = videos;
  c.test_videos = 4;
  c.seed = seed;
  return generate(c).train;
}

TrainConfig quick(Objective mode = Objective::wsgn) {
  TrainConfig t;
  t.epochs = 3;
  t.batch_size = 8;
  t.sub_batches = 4;
  t.mode = mode;
  return t;
}

double max_param_diff(const ModelParams& a, const ModelParams& b) {
  double d = 0.0;
  const auto x = a.blocks();
  const auto y = b.blocks();
  for (std::size_t k = 0; k < x.size(); ++k) {
    for (std::size_t i = 0; i < x[k]->value.size(); ++i) {
      d = std::max(d, std::abs(x[k]->value.values()[i] - y[k]->value.values()[i]));
    }
  }
  return d;
}

bool params_identical(const ModelParams& a, const ModelParams& b) {
  const auto x = a.blocks();
  const auto y = b.blocks();
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (!(x[k]->value == y[k]->value)) return false;
  }
  return true;
}

std::vector<std::size_t> kept_frames(const FeatureSequence& in, const FeatureSequence& out) {
  // Recover kept indices from the feature rows, which are distinct.
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < out.frames(); ++k) {
    for (std::size_t t = 0; t < in.frames(); ++t) {
      if (in.features(t, 0) == out.features(k, 0)) idx.push_back(t);
    }
  }
  return idx;
}

FeatureSequence counting_video(std::size_t T) {
  FeatureSequence v;
  v.id = "v";
  v.features = Matrix(T, 2);
  for (std::size_t t = 0; t < T; ++t) v.features(t, 0) = static_cast<double>(t);
  v.labels = {1.0, 1.0};
  v.segments = {{0, 2, 7}, {1, 8, 9}};
  return v;
}

}  // namespace

TEST_CASE("subsample examples") {
  const FeatureSequence v = counting_video(10);
  const FeatureSequence id = subsample(v, 1, 0);
  CHECK(id.features == v.features);
  CHECK(id.segments == v.segments);
  CHECK(kept_frames(v, subsample(v, 5, 0)) == std::vector<std::size_t>{0, 5});
  CHECK(kept_frames(v, subsample(v, 5, 3)) == std::vector<std::size_t>{3, 8});
  CHECK(kept_frames(v, subsample(v, 5, 10)) == std::vector<std::size_t>{9});
  CHECK(kept_frames(v, subsample(v, 5, 99)) == std::vector<std::size_t>{9});
  CHECK(subsample(v, 5, 0).fps == 1.0);
}

TEST_CASE("property: subsampled segments cover exactly the kept frames of each segment") {
  Rng rng = testutil::rng_for(40);
  for (int i = 0; i < 500; ++i) {
    const std::size_t T = testutil::uniform_size(rng, 1, 60);
    FeatureSequence v = counting_video(T);
    v.segments.clear();
    v.labels = {0.0, 0.0};
    std::size_t t = 0;
    while (t + 1 < T) {
      const std::size_t s = t + testutil::uniform_size(rng, 0, 5);
      const std::size_t e = s + testutil::uniform_size(rng, 1, 8);
      if (e > T) break;
      const std::size_t q = testutil::uniform_size(rng, 0, 1);
      v.segments.push_back({q, s, e});
      v.labels[q] = 1.0;
      t = e + 1;
    }
    const std::size_t stride = testutil::uniform_size(rng, 1, 7);
    const std::size_t offset = testutil::uniform_size(rng, 0, 20);
    const FeatureSequence out = subsample(v, stride, offset);
    const auto kept = kept_frames(v, out);
    REQUIRE(kept.size() == out.frames());
    const Matrix expect_full = frame_labels(v.segments, T, 2);
    const Matrix got = frame_labels(out.segments, out.frames(), 2);
    for (std::size_t k = 0; k < kept.size(); ++k) {
      CHECK(got(k, 0) == expect_full(kept[k], 0));
      CHECK(got(k, 1) == expect_full(kept[k], 1));
    }
    CHECK(out.labels == v.labels);
  }
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const Dataset d = small_data();
  TrainConfig t = quick();
  t.learning_rate = 0.0;
  const ModelConfig m;
  const TrainState s = train(d, m, t);
  CHECK(params_identical(s.params, initial_state(m, t).params));
  CHECK(s.loss_curve.size() == 3);
}

TEST_CASE("same seed and config give bitwise identical runs") {
  const Dataset d = small_data();
  for (Objective mode : {Objective::naive, Objective::wsgn, Objective::supervised}) {
    const TrainState a = train(d, ModelConfig{}, quick(mode));
    const TrainState b = train(d, ModelConfig{}, quick(mode));
    CHECK(a.loss_curve == b.loss_curve);
    CHECK(params_identical(a.params, b.params));
  }
  TrainConfig other = quick();
  other.seed = 1;
  CHECK_FALSE(train(d, ModelConfig{}, other).loss_curve == train(d, ModelConfig{}, quick()).loss_curve);
}

TEST_CASE("one sub-batch and thirty-two sub-batches give the same step") {
  const Dataset d = small_data(64);
  for (Objective mode : {Objective::naive, Objective::wsgn, Objective::supervised}) {
    TrainConfig a = quick(mode);
    a.batch_size = 64;
    a.epochs = 2;
    a.sub_batches = 1;
    TrainConfig b = a;
    b.sub_batches = 32;
    const TrainState x = train(d, ModelConfig{}, a);
    const TrainState y = train(d, ModelConfig{}, b);
    CHECK(max_param_diff(x.params, y.params) <= 1e-10);
    CHECK(std::abs(x.loss_curve.back() - y.loss_curve.back()) <= 1e-10);
  }
}

TEST_CASE("resuming from a checkpoint continues bitwise like an uninterrupted run") {
  testutil::TempDir dir("trainer");
  const Dataset d = small_data();
  TrainConfig t = quick();
  t.epochs = 6;
  const ModelConfig m;
  const TrainState full = train(d, m, t);

  TrainConfig half = t;
  half.epochs = 3;
  save_checkpoint(dir.path() / "c", Checkpoint{m, half, train(d, m, half)});
  Checkpoint c = load_checkpoint(dir.path() / "c");
  CHECK(c.state.epoch == 3);
  CHECK(c.model.norms == m.norms);
  CHECK(c.model.hidden() == m.hidden());
  CHECK(c.train.seed == t.seed);
  const TrainState resumed = train(d, m, t, std::move(c.state));
  CHECK(resumed.epoch == 6);
  CHECK(resumed.loss_curve == full.loss_curve);
  CHECK(params_identical(resumed.params, full.params));
}

TEST_CASE("checkpoint round trip is exact and rejects damage") {
  testutil::TempDir dir("trainer");
  const Dataset d = small_data();
  const ModelConfig m;
  const TrainConfig t = quick(Objective::supervised);
  const TrainState s = train(d, m, t);
  save_checkpoint(dir.path() / "c", Checkpoint{m, t, s});
  const Checkpoint c = load_checkpoint(dir.path() / "c");
  CHECK(params_identical(c.state.params, s.params));
  CHECK(c.state.loss_curve == s.loss_curve);
  CHECK(c.state.velocity.size() == s.velocity.size());
  for (std::size_t k = 0; k < s.velocity.size(); ++k) CHECK(c.state.velocity[k] == s.velocity[k]);
  CHECK(c.train.mode == Objective::supervised);
  CHECK(c.train.learning_rate == t.learning_rate);

  const std::string bytes = read_file(dir.path() / "c");
  write_file(dir.path() / "bad", "x" + bytes);
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "bad"), FormatError);
  write_file(dir.path() / "short", bytes.substr(0, bytes.size() - 10));
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "short"), FormatError);
}

TEST_CASE("inference components") {
  const Dataset d = small_data(16);
  ModelConfig m;
  const TrainState naive = train(d, m, quick(Objective::naive));
  const auto ni = infer(d, naive.params, m, Objective::naive);
  REQUIRE(ni.size() == d.videos.size());
  for (std::size_t i = 0; i < ni.size(); ++i) {
    CHECK(ni[i].video_id == d.videos[i].id);
    CHECK(ni[i].G == Matrix(d.videos[i].frames(), m.num_classes, 1.0));
    CHECK(ni[i].fused == ni[i].P);
    CHECK(ni[i].X.size() == 0);
  }

  for (const char* norms : {"complete", "zloc", "gloc+sloc", "zloc+sloc"}) {
    m.norms = parse_norm_set(norms);
    const TrainState w = train(d, m, quick());
    const auto a = infer(d, w.params, m, Objective::wsgn);
    const auto b = infer(d, w.params, m, Objective::wsgn);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].fused == b[i].fused);
      const VideoInference& r = a[i];
      const std::size_t T = d.videos[i].frames();
      double worst = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t q = 0; q < m.num_classes; ++q) {
          double g = 0.0;
          if (m.norms.zloc) g += r.Z(t, q);
          if (m.norms.gloc) g += r.L(t, q);
          if (m.norms.sloc) g += r.S(t, q);
          g /= m.norms.count();
          worst = std::max(worst, std::abs(g - r.G(t, q)));
          worst = std::max(worst, std::abs(r.fused(t, q) - r.G(t, q) * r.P(t, q)));
        }
      }
      CHECK(worst <= 1e-15);
    }
  }
}

TEST_CASE("non-finite loss aborts with epoch, batch and video") {
  Dataset d = small_data(8);
  for (std::size_t t = 0; t < d.videos[5].frames(); ++t) {
    d.videos[5].features(t, 0) = std::numeric_limits<double>::quiet_NaN();
  }
  std::string msg;
  try {
    train(d, ModelConfig{}, quick());
  } catch (const NumericError& e) {
    msg = e.what();
  }
  CHECK(msg.find("epoch 0") != std::string::npos);
  CHECK(msg.find("batch") != std::string::npos);
  CHECK(msg.find(d.videos[5].id) != std::string::npos);
}

TEST_CASE("invalid training setups") {
  const Dataset d = small_data(4);
  CHECK_THROWS(train(Dataset{}, ModelConfig{}, quick()));
  TrainConfig t = quick();
  t.temporal_stride = 0;
  CHECK_THROWS(train(d, ModelConfig{}, t));
  Dataset weak = d;
  for (FeatureSequence& v : weak.videos) v.segments.clear();
  CHECK_THROWS(train(weak, ModelConfig{}, quick(Objective::supervised)));
  CHECK_NOTHROW(train(weak, ModelConfig{}, quick(Objective::wsgn)));
}

TEST_CASE("training on the reference benchmark makes progress") {
  const Dataset d = generate(SynthConfig{}).train;
  const TrainState s = train(d, ModelConfig{}, TrainConfig{});
  REQUIRE(s.loss_curve.size() == 80);
  CHECK(s.loss_curve.back() < s.loss_curve.front());
  // Window-5 moving average is non-increasing.
  std::vector<double> smooth;
  for (std::size_t e = 0; e + 5 <= s.loss_curve.size(); ++e) {
    double m = 0.0;
    for (std::size_t k = e; k < e + 5; ++k) m += s.loss_curve[k];
    smooth.push_back(m / 5.0);
  }
  std::size_t rises = 0;
  for (std::size_t e = 1; e < smooth.size(); ++e) rises += smooth[e] > smooth[e - 1];
  CHECK(rises == 0);
  CHECK(format_loss_curve({0.5, 0.25}) == "epoch,loss\n1,0.5\n2,0.25\n");
}
