#pragma once

// Dense differentiable primitives with hand-written backward passes, an SGD
// optimizer, and a central-difference gradient checker.

#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "wsgn/matrix.h"

namespace wsgn {

using Rng = std::mt19937_64;

// Raised when a loss or gradient stops being finite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ParamBlock {
  ParamBlock() = default;
  ParamBlock(std::size_t rows, std::size_t cols) : value(rows, cols), grad(rows, cols) {}

  Matrix value;
  Matrix grad;

  void zero_grad() { grad.fill(0.0); }
};

// out = x * w + b, with b a 1 x H row broadcast over rows.
Matrix linear_forward(const Matrix& x, const Matrix& w, const Matrix& b);

struct LinearGrads {
  Matrix x;
  Matrix w;
  Matrix b;
};
LinearGrads linear_backward(const Matrix& x, const Matrix& w, const Matrix& grad_out);

Matrix relu_forward(const Matrix& x);
// Passes the gradient where x > 0; zero at and below 0.
Matrix relu_backward(const Matrix& x, const Matrix& grad_out);

struct DropoutResult {
  Matrix output;
  Matrix mask;  // 1 for kept entries, 0 for dropped ones
};
// Inverted dropout: survivors are scaled by 1/(1-rate) so eval is the identity.
DropoutResult dropout_forward(const Matrix& x, double rate, Rng& rng, bool training);
Matrix dropout_backward(const Matrix& grad_out, const Matrix& mask, double rate);

Matrix softmax_rows(const Matrix& x);
Matrix softmax_rows_backward(const Matrix& probs, const Matrix& grad_out);

inline constexpr double kBceEpsilon = 1e-7;

struct BceResult {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d pred, evaluated at the clamped pred
};
// Mean binary cross entropy over the C entries.
BceResult bce_loss(std::span<const double> pred, std::span<const double> target);

struct SgdConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0005;
};

// SGD with heavy-ball momentum and L2 weight decay folded into the velocity:
//   v <- momentum * v + grad + weight_decay * value
//   value <- value - learning_rate * v
class Sgd {
 public:
  explicit Sgd(SgdConfig config);

  const SgdConfig& config() const { return config_; }

  // Applies one update and zeroes the gradients. Velocity buffers are created
  // lazily with the shapes of `params` on the first call.
  void step(std::span<ParamBlock* const> params);

  std::vector<Matrix>& velocity() { return velocity_; }
  const std::vector<Matrix>& velocity() const { return velocity_; }

 private:
  SgdConfig config_;
  std::vector<Matrix> velocity_;
};

struct NamedBlock {
  std::string name;
  ParamBlock* block = nullptr;
};

struct BlockError {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<BlockError> blocks;
};

// Compares each block's stored analytic gradient with the central difference
// (f(v+h) - f(v-h)) / 2h of `loss`. Relative error is
// |a - n| / max(|a|, |n|, 1e-8). Values are restored after each probe.
GradCheckReport grad_check(const std::function<double()>& loss,
                           std::span<const NamedBlock> params, double h = 1e-5);

}  // namespace wsgn
