#include "wsgn/model.h"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace wsgn {

std::string to_string(Objective o) {
  switch (o) {
    case Objective::naive: return "naive";
    case Objective::wsgn: return "wsgn";
    case Objective::supervised: return "supervised";
  }
  return "unknown";
}

Objective parse_objective(const std::string& s) {
  if (s == "naive") return Objective::naive;
  if (s == "wsgn") return Objective::wsgn;
  if (s == "supervised") return Objective::supervised;
  throw std::invalid_argument("unknown mode '" + s + "' (expected naive, wsgn or supervised)");
}

NormSet parse_norm_set(const std::string& s) {
  if (s == "complete" || s == "all") return NormSet{true, true, true};
  NormSet n{false, false, false};
  if (s == "none") return n;
  std::stringstream in(s);
  std::string tok;
  while (std::getline(in, tok, '+')) {
    if (tok == "zloc") n.zloc = true;
    else if (tok == "gloc") n.gloc = true;
    else if (tok == "sloc") n.sloc = true;
    else throw std::invalid_argument("unknown normalization '" + tok + "' in '" + s + "'");
  }
  return n;
}

std::string to_string(const NormSet& n) {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += '+';
    out += name;
  };
  add(n.zloc, "zloc");
  add(n.gloc, "gloc");
  add(n.sloc, "sloc");
  return out.empty() ? "none" : out;
}

void ModelConfig::validate() const {
  if (feature_dim == 0) throw std::invalid_argument("feature_dim must be positive");
  if (num_classes == 0) throw std::invalid_argument("num_classes must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw std::invalid_argument("dropout_rate must lie in [0, 1)");
  }
  if (!norms.any()) throw std::invalid_argument("at least one normalization must be enabled");
  if (!(epsilon_std > 0.0)) throw std::invalid_argument("epsilon_std must be positive");
}

namespace {

Head make_head(std::size_t in, std::size_t hidden, std::size_t out) {
  return Head{ParamBlock(in, hidden), ParamBlock(1, hidden), ParamBlock(hidden, out),
              ParamBlock(1, out)};
}

void glorot(ParamBlock& p, Rng& rng) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : p.value.values()) v = dist(rng);
}

}  // namespace

ModelParams ModelParams::zeros(const ModelConfig& config) {
  const std::size_t m = config.feature_dim, h = config.hidden(), c = config.num_classes;
  return ModelParams{make_head(m, h, c), make_head(m, h, c), ParamBlock(1, c),
                     ParamBlock(1, c)};
}

ModelParams ModelParams::initialize(const ModelConfig& config, Rng& rng) {
  ModelParams p = zeros(config);
  glorot(p.cls.w1, rng);
  glorot(p.cls.w2, rng);
  glorot(p.det.w1, rng);
  glorot(p.det.w2, rng);
  p.global_scale.value.fill(1.0);
  return p;
}

std::vector<std::string> ModelParams::block_names() {
  return {"cls.w1", "cls.b1", "cls.w2", "cls.b2", "det.w1",
          "det.b1", "det.w2", "det.b2", "global_mean", "global_scale"};
}

std::vector<ParamBlock*> ModelParams::blocks() {
  return {&cls.w1, &cls.b1, &cls.w2, &cls.b2, &det.w1, &det.b1,
          &det.w2, &det.b2, &global_mean, &global_scale};
}

std::vector<NamedBlock> ModelParams::named_blocks() {
  std::vector<NamedBlock> out;
  const std::vector<std::string> names = block_names();
  const std::vector<ParamBlock*> ptrs = blocks();
  for (std::size_t i = 0; i < ptrs.size(); ++i) out.push_back({names[i], ptrs[i]});
  return out;
}

void ModelParams::zero_grad() {
  for (ParamBlock* b : blocks()) b->zero_grad();
}

std::vector<const ParamBlock*> ModelParams::blocks() const {
  return {&cls.w1, &cls.b1, &cls.w2, &cls.b2, &det.w1, &det.b1,
          &det.w2, &det.b2, &global_mean, &global_scale};
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  auto ba = a.blocks();
  auto bb = b.blocks();
  for (std::size_t i = 0; i < ba.size(); ++i) {
    if (!(ba[i]->value == bb[i]->value)) return false;
  }
  return true;
}

HeadCache head_forward(const Head& head, const Matrix& features, double dropout_rate,
                       Phase phase, Rng& rng) {
  HeadCache c;
  DropoutResult d = dropout_forward(features, dropout_rate, rng, phase == Phase::train);
  c.input = std::move(d.output);
  c.mask = std::move(d.mask);
  c.pre = linear_forward(c.input, head.w1.value, head.b1.value);
  c.hidden = relu_forward(c.pre);
  c.out = linear_forward(c.hidden, head.w2.value, head.b2.value);
  return c;
}

void head_backward(Head& head, const HeadCache& cache, const Matrix& grad_logits,
                   double /*dropout_rate*/) {
  LinearGrads g2 = linear_backward(cache.hidden, head.w2.value, grad_logits);
  head.w2.grad += g2.w;
  head.b2.grad += g2.b;
  Matrix grad_pre = relu_backward(cache.pre, g2.x);
  LinearGrads g1 = linear_backward(cache.input, head.w1.value, grad_pre);
  head.w1.grad += g1.w;
  head.b1.grad += g1.b;
  // Features are not trainable, so the gradient stops at the dropout input.
}

namespace {

void require_features(const Matrix& features, const ModelConfig& config) {
  if (features.cols() != config.feature_dim) {
    throw DimensionError("features have " + std::to_string(features.cols()) +
                         " columns, model expects feature_dim " +
                         std::to_string(config.feature_dim));
  }
  if (features.rows() == 0) throw DimensionError("video has no frames");
}

}  // namespace

Matrix class_probs(const Matrix& features, const ModelParams& params,
                   const ModelConfig& config, Phase phase, Rng& rng) {
  require_features(features, config);
  return softmax_rows(head_forward(params.cls, features, config.dropout_rate, phase, rng).out);
}

Matrix select_scores(const Matrix& features, const ModelParams& params,
                     const ModelConfig& config, Phase phase, Rng& rng) {
  require_features(features, config);
  return head_forward(params.det, features, config.dropout_rate, phase, rng).out;
}

namespace {

struct ColumnStats {
  double mean = 0.0;
  double std = 0.0;
};

ColumnStats column_stats(const Matrix& X, std::size_t q) {
  const std::size_t T = X.rows();
  ColumnStats s;
  for (std::size_t t = 0; t < T; ++t) s.mean += X(t, q);
  s.mean /= static_cast<double>(T);
  double var = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const double d = X(t, q) - s.mean;
    var += d * d;
  }
  s.std = std::sqrt(var / static_cast<double>(T));
  return s;
}

}  // namespace

Matrix zloc(const Matrix& X, double epsilon_std) {
  if (X.rows() == 0) throw DimensionError("zloc: empty score matrix");
  Matrix Z(X.rows(), X.cols());
  for (std::size_t q = 0; q < X.cols(); ++q) {
    const ColumnStats st = column_stats(X, q);
    const double scale = st.std > epsilon_std ? st.std : epsilon_std;
    for (std::size_t t = 0; t < X.rows(); ++t) {
      const double u = (X(t, q) - st.mean) / scale;
      Z(t, q) = std::exp(-u * u);
    }
  }
  return Z;
}

Matrix zloc_backward(const Matrix& X, const Matrix& grad_Z, double epsilon_std) {
  require_same_shape(X, grad_Z, "zloc_backward");
  const std::size_t T = X.rows();
  const double inv_t = 1.0 / static_cast<double>(T);
  Matrix grad_X(T, X.cols());
  std::vector<double> u(T), gu(T);
  for (std::size_t q = 0; q < X.cols(); ++q) {
    const ColumnStats st = column_stats(X, q);
    const bool floored = !(st.std > epsilon_std);
    const double scale = floored ? epsilon_std : st.std;
    double mean_gu = 0.0, mean_gu_u = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      u[t] = (X(t, q) - st.mean) / scale;
      const double z = std::exp(-u[t] * u[t]);
      gu[t] = grad_Z(t, q) * (-2.0 * u[t] * z);
      mean_gu += gu[t];
      mean_gu_u += gu[t] * u[t];
    }
    mean_gu *= inv_t;
    mean_gu_u *= inv_t;
    for (std::size_t t = 0; t < T; ++t) {
      // Standardization backward; the u * mean(gu * u) term is the path
      // through the column std and vanishes when the std is floored.
      double g = gu[t] - mean_gu;
      if (!floored) g -= u[t] * mean_gu_u;
      grad_X(t, q) = g / scale;
    }
  }
  return grad_X;
}

namespace {

void require_class_vector(const Matrix& X, const Matrix& v, const char* what) {
  if (v.rows() != 1 || v.cols() != X.cols()) {
    throw DimensionError(std::string(what) + ": expected 1x" + std::to_string(X.cols()) +
                         ", got " + v.shape_string());
  }
}

}  // namespace

Matrix gloc(const Matrix& X, const Matrix& mean, const Matrix& scale, double epsilon_std) {
  require_class_vector(X, mean, "gloc mean");
  require_class_vector(X, scale, "gloc scale");
  Matrix L(X.rows(), X.cols());
  for (std::size_t q = 0; q < X.cols(); ++q) {
    const double s = std::max(std::abs(scale(0, q)), epsilon_std);
    for (std::size_t t = 0; t < X.rows(); ++t) {
      const double u = (X(t, q) - mean(0, q)) / s;
      L(t, q) = std::exp(-u * u);
    }
  }
  return L;
}

GlocGrads gloc_backward(const Matrix& X, const Matrix& mean, const Matrix& scale,
                        const Matrix& grad_L, double epsilon_std) {
  require_class_vector(X, mean, "gloc_backward mean");
  require_class_vector(X, scale, "gloc_backward scale");
  require_same_shape(X, grad_L, "gloc_backward");
  GlocGrads g{Matrix(X.rows(), X.cols()), Matrix(1, X.cols()), Matrix(1, X.cols())};
  for (std::size_t q = 0; q < X.cols(); ++q) {
    const double raw = scale(0, q);
    const bool floored = !(std::abs(raw) > epsilon_std);
    const double s = floored ? epsilon_std : std::abs(raw);
    const double sign = raw < 0.0 ? -1.0 : 1.0;
    double g_mean = 0.0, g_scale = 0.0;
    for (std::size_t t = 0; t < X.rows(); ++t) {
      const double u = (X(t, q) - mean(0, q)) / s;
      const double l = std::exp(-u * u);
      // dl/du = -2 u l
      const double gu = grad_L(t, q) * (-2.0 * u * l);
      g.X(t, q) = gu / s;
      g_mean -= gu / s;
      g_scale -= gu * u / s;
    }
    g.mean(0, q) = g_mean;
    g.scale(0, q) = floored ? 0.0 : g_scale * sign;
  }
  return g;
}

Matrix sloc(const Matrix& X) {
  if (X.rows() == 0) throw DimensionError("sloc: empty score matrix");
  Matrix S(X.rows(), X.cols());
  for (std::size_t q = 0; q < X.cols(); ++q) {
    double peak = X(0, q);
    for (std::size_t t = 1; t < X.rows(); ++t) peak = std::max(peak, X(t, q));
    double total = 0.0;
    for (std::size_t t = 0; t < X.rows(); ++t) {
      S(t, q) = std::exp(X(t, q) - peak);
      total += S(t, q);
    }
    for (std::size_t t = 0; t < X.rows(); ++t) S(t, q) /= total;
  }
  return S;
}

Matrix sloc_backward(const Matrix& S, const Matrix& grad_S) {
  require_same_shape(S, grad_S, "sloc_backward");
  Matrix g(S.rows(), S.cols());
  for (std::size_t q = 0; q < S.cols(); ++q) {
    double dot = 0.0;
    for (std::size_t t = 0; t < S.rows(); ++t) dot += S(t, q) * grad_S(t, q);
    for (std::size_t t = 0; t < S.rows(); ++t) g(t, q) = S(t, q) * (grad_S(t, q) - dot);
  }
  return g;
}

Matrix fuse_weights(const Matrix& Z, const Matrix& L, const Matrix& S, const NormSet& enabled) {
  if (!enabled.any()) throw std::invalid_argument("fuse_weights: no normalization enabled");
  const Matrix* parts[3] = {enabled.zloc ? &Z : nullptr, enabled.gloc ? &L : nullptr,
                            enabled.sloc ? &S : nullptr};
  const Matrix* first = nullptr;
  for (const Matrix* p : parts) {
    if (!p) continue;
    if (!first) first = p;
    require_same_shape(*first, *p, "fuse_weights");
  }
  if (enabled.count() == 1) return *first;
  Matrix G(first->rows(), first->cols());
  for (const Matrix* p : parts) {
    if (p) G += *p;
  }
  const double n = static_cast<double>(enabled.count());
  for (double& v : G.values()) v /= n;
  return G;
}

std::vector<double> video_predict(const Matrix& P, const Matrix& G) {
  require_same_shape(P, G, "video_predict");
  if (P.rows() == 0) throw DimensionError("video_predict: video has no frames");
  std::vector<double> y(P.cols(), 0.0);
  for (std::size_t t = 0; t < P.rows(); ++t) {
    for (std::size_t q = 0; q < P.cols(); ++q) y[q] += G(t, q) * P(t, q);
  }
  const double n = static_cast<double>(P.rows());
  for (double& v : y) v /= n;
  return y;
}

std::vector<double> naive_predict(const Matrix& P) {
  if (P.rows() == 0) throw DimensionError("naive_predict: video has no frames");
  return column_means(P);
}

Matrix frame_scores(const Matrix& P, const Matrix& G) { return hadamard(G, P); }

ForwardTrace forward(const Matrix& features, const ModelParams& params,
                     const ModelConfig& config, Objective objective, Phase phase, Rng& rng) {
  require_features(features, config);
  ForwardTrace tr;
  tr.objective = objective;
  tr.norms = config.norms;
  tr.dropout_rate = config.dropout_rate;
  tr.cls_cache = head_forward(params.cls, features, config.dropout_rate, phase, rng);
  tr.P = softmax_rows(tr.cls_cache.out);
  if (objective != Objective::wsgn) {
    tr.G = Matrix(tr.P.rows(), tr.P.cols(), 1.0);
    tr.y_hat = naive_predict(tr.P);
    return tr;
  }
  tr.det_cache = head_forward(params.det, features, config.dropout_rate, phase, rng);
  tr.X = tr.det_cache.out;
  if (config.norms.zloc) tr.Z = zloc(tr.X, config.epsilon_std);
  if (config.norms.gloc) {
    tr.L = gloc(tr.X, params.global_mean.value, params.global_scale.value, config.epsilon_std);
  }
  if (config.norms.sloc) tr.S = sloc(tr.X);
  tr.G = fuse_weights(tr.Z, tr.L, tr.S, config.norms);
  tr.y_hat = video_predict(tr.P, tr.G);
  return tr;
}

namespace {

void require_labels(std::span<const double> labels, const ModelConfig& config) {
  if (labels.size() != config.num_classes) {
    throw DimensionError("label vector has length " + std::to_string(labels.size()) +
                         ", expected " + std::to_string(config.num_classes));
  }
}

}  // namespace

StepResult weak_forward_backward(const Matrix& features, std::span<const double> labels,
                                 ModelParams& params, const ModelConfig& config,
                                 Phase phase, Rng& rng) {
  require_labels(labels, config);
  StepResult r;
  r.trace = forward(features, params, config, Objective::wsgn, phase, rng);
  const ForwardTrace& tr = r.trace;
  const BceResult bce = bce_loss(tr.y_hat, labels);
  r.loss = bce.loss;

  const std::size_t T = tr.P.rows(), C = tr.P.cols();
  const double inv_t = 1.0 / static_cast<double>(T);
  Matrix grad_P(T, C), grad_G(T, C);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t q = 0; q < C; ++q) {
      grad_P(t, q) = bce.grad[q] * tr.G(t, q) * inv_t;
      grad_G(t, q) = bce.grad[q] * tr.P(t, q) * inv_t;
    }
  }
  head_backward(params.cls, tr.cls_cache, softmax_rows_backward(tr.P, grad_P),
                config.dropout_rate);

  grad_G *= 1.0 / static_cast<double>(config.norms.count());
  Matrix grad_X(T, C);
  if (config.norms.zloc) grad_X += zloc_backward(tr.X, grad_G, config.epsilon_std);
  if (config.norms.gloc) {
    GlocGrads g = gloc_backward(tr.X, params.global_mean.value, params.global_scale.value,
                                grad_G, config.epsilon_std);
    grad_X += g.X;
    params.global_mean.grad += g.mean;
    params.global_scale.grad += g.scale;
  }
  if (config.norms.sloc) grad_X += sloc_backward(tr.S, grad_G);
  head_backward(params.det, tr.det_cache, grad_X, config.dropout_rate);
  return r;
}

StepResult naive_forward_backward(const Matrix& features, std::span<const double> labels,
                                  ModelParams& params, const ModelConfig& config,
                                  Phase phase, Rng& rng) {
  require_labels(labels, config);
  StepResult r;
  r.trace = forward(features, params, config, Objective::naive, phase, rng);
  const ForwardTrace& tr = r.trace;
  const BceResult bce = bce_loss(tr.y_hat, labels);
  r.loss = bce.loss;
  const std::size_t T = tr.P.rows(), C = tr.P.cols();
  const double inv_t = 1.0 / static_cast<double>(T);
  Matrix grad_P(T, C);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t q = 0; q < C; ++q) grad_P(t, q) = bce.grad[q] * inv_t;
  }
  head_backward(params.cls, tr.cls_cache, softmax_rows_backward(tr.P, grad_P),
                config.dropout_rate);
  return r;
}

StepResult supervised_forward_backward(const Matrix& features,
                                       std::span<const double> labels,
                                       const Matrix& frame_labels, ModelParams& params,
                                       const ModelConfig& config, Phase phase, Rng& rng) {
  require_labels(labels, config);
  if (frame_labels.rows() != features.rows() || frame_labels.cols() != config.num_classes) {
    throw DimensionError("supervised loss needs a label row for every frame: frame labels " +
                         frame_labels.shape_string() + ", features have " +
                         std::to_string(features.rows()) + " frames");
  }
  StepResult r;
  r.trace = forward(features, params, config, Objective::supervised, phase, rng);
  const ForwardTrace& tr = r.trace;
  const std::size_t T = tr.P.rows(), C = tr.P.cols();
  const double inv_t = 1.0 / static_cast<double>(T);

  const BceResult video = bce_loss(tr.y_hat, labels);
  r.loss = video.loss;
  Matrix grad_P(T, C);
  for (std::size_t t = 0; t < T; ++t) {
    const BceResult frame = bce_loss(tr.P.row(t), frame_labels.row(t));
    r.loss += inv_t * frame.loss;
    for (std::size_t q = 0; q < C; ++q) {
      grad_P(t, q) = inv_t * (video.grad[q] + frame.grad[q]);
    }
  }
  head_backward(params.cls, tr.cls_cache, softmax_rows_backward(tr.P, grad_P),
                config.dropout_rate);
  return r;
}

double objective_loss(const Matrix& features, std::span<const double> labels,
                      const Matrix* frame_labels, const ModelParams& params,
                      const ModelConfig& config, Objective objective) {
  Rng unused(0);
  const ForwardTrace tr = forward(features, params, config, objective, Phase::eval, unused);
  double loss = bce_loss(tr.y_hat, labels).loss;
  if (objective == Objective::supervised) {
    if (!frame_labels || frame_labels->rows() != tr.P.rows()) {
      throw DimensionError("supervised loss needs a label row for every frame");
    }
    const double inv_t = 1.0 / static_cast<double>(tr.P.rows());
    for (std::size_t t = 0; t < tr.P.rows(); ++t) {
      loss += inv_t * bce_loss(tr.P.row(t), frame_labels->row(t)).loss;
    }
  }
  return loss;
}

}  // namespace wsgn
