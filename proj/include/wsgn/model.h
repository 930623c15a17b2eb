#pragma once

// Two-stream weakly supervised localization model: a classification head
// producing per-frame class probabilities and a selection head whose scores
// are normalized over time (local Gaussian, learned global Gaussian, temporal
// softmax) into per-frame, per-class weights.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wsgn/diffcore.h"
#include "wsgn/matrix.h"

namespace wsgn {

enum class Objective { naive, wsgn, supervised };

std::string to_string(Objective o);
Objective parse_objective(const std::string& s);

struct NormSet {
  bool zloc = true;
  bool gloc = true;
  bool sloc = true;

  int count() const { return int(zloc) + int(gloc) + int(sloc); }
  bool any() const { return count() > 0; }
  friend bool operator==(const NormSet&, const NormSet&) = default;
};

// Accepts "complete", "none" or a '+'-separated list such as "zloc+gloc".
NormSet parse_norm_set(const std::string& s);
std::string to_string(const NormSet& n);

struct ModelConfig {
  std::size_t feature_dim = 16;
  std::size_t num_classes = 5;
  std::size_t hidden_dim = 0;  // 0 means "same as feature_dim"
  double dropout_rate = 0.5;
  NormSet norms;
  double epsilon_std = 1e-5;

  std::size_t hidden() const { return hidden_dim == 0 ? feature_dim : hidden_dim; }
  // Throws std::invalid_argument on a violated invariant.
  void validate() const;
};

// Two-layer perceptron M -> hidden -> C with a ReLU in between.
struct Head {
  ParamBlock w1, b1, w2, b2;
};

struct ModelParams {
  Head cls;
  Head det;
  ParamBlock global_mean;   // 1 x C
  ParamBlock global_scale;  // 1 x C, used as max(|s|, epsilon_std)

  static ModelParams zeros(const ModelConfig& config);
  // Glorot-uniform head weights, zero biases, mean 0, scale 1.
  static ModelParams initialize(const ModelConfig& config, Rng& rng);

  static std::vector<std::string> block_names();
  std::vector<NamedBlock> named_blocks();
  std::vector<ParamBlock*> blocks();
  std::vector<const ParamBlock*> blocks() const;
  void zero_grad();
  friend bool operator==(const ModelParams& a, const ModelParams& b);
};

enum class Phase { train, eval };

struct HeadCache {
  Matrix input;   // features after dropout
  Matrix mask;
  Matrix pre;     // first-layer pre-activation
  Matrix hidden;  // ReLU output
  Matrix out;     // logits
};

struct ForwardTrace {
  Objective objective = Objective::wsgn;
  Matrix X;  // raw selection scores (wsgn only)
  Matrix P;  // per-frame class probabilities
  Matrix Z, L, S;  // normalization outputs for the enabled set
  Matrix G;        // fused weights; all ones for naive/supervised
  std::vector<double> y_hat;
  HeadCache cls_cache;
  HeadCache det_cache;
  NormSet norms;
  double dropout_rate = 0.0;
};

// Frame-wise head evaluation. Dropout is applied to the input features in the
// train phase with a mask drawn from `rng`.
HeadCache head_forward(const Head& head, const Matrix& features, double dropout_rate,
                       Phase phase, Rng& rng);
// Accumulates parameter gradients into `head` from d loss / d logits.
void head_backward(Head& head, const HeadCache& cache, const Matrix& grad_logits,
                   double dropout_rate);

Matrix class_probs(const Matrix& features, const ModelParams& params,
                   const ModelConfig& config, Phase phase, Rng& rng);
Matrix select_scores(const Matrix& features, const ModelParams& params,
                     const ModelConfig& config, Phase phase, Rng& rng);

Matrix zloc(const Matrix& X, double epsilon_std);
Matrix zloc_backward(const Matrix& X, const Matrix& grad_Z, double epsilon_std);

Matrix gloc(const Matrix& X, const Matrix& mean, const Matrix& scale, double epsilon_std);
struct GlocGrads {
  Matrix X;
  Matrix mean;
  Matrix scale;
};
GlocGrads gloc_backward(const Matrix& X, const Matrix& mean, const Matrix& scale,
                        const Matrix& grad_L, double epsilon_std);

Matrix sloc(const Matrix& X);
Matrix sloc_backward(const Matrix& S, const Matrix& grad_S);

// Elementwise mean of the enabled normalization outputs.
Matrix fuse_weights(const Matrix& Z, const Matrix& L, const Matrix& S, const NormSet& enabled);

std::vector<double> video_predict(const Matrix& P, const Matrix& G);
std::vector<double> naive_predict(const Matrix& P);
Matrix frame_scores(const Matrix& P, const Matrix& G);

// Runs the streams required by `objective` and fills every trace field.
ForwardTrace forward(const Matrix& features, const ModelParams& params,
                     const ModelConfig& config, Objective objective, Phase phase, Rng& rng);

struct StepResult {
  double loss = 0.0;
  ForwardTrace trace;
};

// Video-level BCE on the weighted prediction. Gradients are added to params.
StepResult weak_forward_backward(const Matrix& features, std::span<const double> labels,
                                 ModelParams& params, const ModelConfig& config,
                                 Phase phase, Rng& rng);

// Video-level BCE on the unweighted frame average.
StepResult naive_forward_backward(const Matrix& features, std::span<const double> labels,
                                  ModelParams& params, const ModelConfig& config,
                                  Phase phase, Rng& rng);

// L(y, mean_t P_t) + (1/T) sum_t L(y_t, P_t). `frame_labels` is T x C.
StepResult supervised_forward_backward(const Matrix& features,
                                       std::span<const double> labels,
                                       const Matrix& frame_labels, ModelParams& params,
                                       const ModelConfig& config, Phase phase, Rng& rng);

// Forward-only loss, used by the gradient checker.
double objective_loss(const Matrix& features, std::span<const double> labels,
                      const Matrix* frame_labels, const ModelParams& params,
                      const ModelConfig& config, Objective objective);

}  // namespace wsgn
