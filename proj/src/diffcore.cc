#include "wsgn/diffcore.h"

#include <algorithm>
#include <cmath>

namespace wsgn {

Matrix linear_forward(const Matrix& x, const Matrix& w, const Matrix& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw DimensionError("linear_forward: x " + x.shape_string() + ", w " +
                         w.shape_string() + ", b " + b.shape_string());
  }
  const std::size_t hidden = w.cols();
  Matrix out(x.rows(), hidden);
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto o = out.row(t);
    std::copy(b.values().begin(), b.values().end(), o.begin());
    for (std::size_t m = 0; m < x.cols(); ++m) {
      const double xv = x(t, m);
      auto wr = w.row(m);
      for (std::size_t h = 0; h < hidden; ++h) o[h] += xv * wr[h];
    }
  }
  return out;
}

LinearGrads linear_backward(const Matrix& x, const Matrix& w, const Matrix& grad_out) {
  if (x.cols() != w.rows() || grad_out.rows() != x.rows() || grad_out.cols() != w.cols()) {
    throw DimensionError("linear_backward: x " + x.shape_string() + ", w " +
                         w.shape_string() + ", grad_out " + grad_out.shape_string());
  }
  LinearGrads g{Matrix(x.rows(), x.cols()), Matrix(w.rows(), w.cols()),
                Matrix(1, w.cols())};
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto go = grad_out.row(t);
    for (std::size_t m = 0; m < x.cols(); ++m) {
      auto wr = w.row(m);
      auto gw = g.w.row(m);
      const double xv = x(t, m);
      double acc = 0.0;
      for (std::size_t h = 0; h < go.size(); ++h) {
        acc += go[h] * wr[h];
        gw[h] += xv * go[h];
      }
      g.x(t, m) = acc;
    }
    for (std::size_t h = 0; h < go.size(); ++h) g.b(0, h) += go[h];
  }
  return g;
}

Matrix relu_forward(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] < 0.0 ? 0.0 : xv[i];  // NaN passes through
  return out;
}

Matrix relu_backward(const Matrix& x, const Matrix& grad_out) {
  require_same_shape(x, grad_out, "relu_backward");
  Matrix out(x.rows(), x.cols());
  auto xv = x.values();
  auto gv = grad_out.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] > 0.0 ? gv[i] : 0.0;
  return out;
}

DropoutResult dropout_forward(const Matrix& x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout rate must lie in [0, 1), got " +
                                std::to_string(rate));
  }
  DropoutResult r{x, Matrix(x.rows(), x.cols(), 1.0)};
  if (!training || rate == 0.0) return r;
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  auto ov = r.output.values();
  auto mv = r.mask.values();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    if (keep(rng)) {
      ov[i] *= scale;
    } else {
      ov[i] = 0.0;
      mv[i] = 0.0;
    }
  }
  return r;
}

Matrix dropout_backward(const Matrix& grad_out, const Matrix& mask, double rate) {
  require_same_shape(grad_out, mask, "dropout_backward");
  Matrix out(grad_out.rows(), grad_out.cols());
  const double scale = 1.0 / (1.0 - rate);
  auto gv = grad_out.values();
  auto mv = mask.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < gv.size(); ++i) ov[i] = mv[i] != 0.0 ? gv[i] * scale : 0.0;
  return out;
}

Matrix softmax_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto in = x.row(t);
    auto o = out.row(t);
    const double peak = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - peak);
      total += o[c];
    }
    for (double& v : o) v /= total;
  }
  return out;
}

Matrix softmax_rows_backward(const Matrix& probs, const Matrix& grad_out) {
  require_same_shape(probs, grad_out, "softmax_rows_backward");
  Matrix out(probs.rows(), probs.cols());
  for (std::size_t t = 0; t < probs.rows(); ++t) {
    auto p = probs.row(t);
    auto g = grad_out.row(t);
    double dot = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) dot += p[c] * g[c];
    auto o = out.row(t);
    for (std::size_t c = 0; c < p.size(); ++c) o[c] = p[c] * (g[c] - dot);
  }
  return out;
}

BceResult bce_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size() || pred.empty()) {
    throw DimensionError("bce_loss: pred length " + std::to_string(pred.size()) +
                         ", target length " + std::to_string(target.size()));
  }
  const double inv_c = 1.0 / static_cast<double>(pred.size());
  BceResult r;
  r.grad.resize(pred.size());
  for (std::size_t q = 0; q < pred.size(); ++q) {
    const double p = std::clamp(pred[q], kBceEpsilon, 1.0 - kBceEpsilon);
    const double y = target[q];
    r.loss -= inv_c * (y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    r.grad[q] = -inv_c * (y / p - (1.0 - y) / (1.0 - p));
  }
  return r;
}

Sgd::Sgd(SgdConfig config) : config_(config) {
  if (!(config_.learning_rate >= 0.0)) {
    throw std::invalid_argument("learning_rate must be nonnegative");
  }
  if (!(config_.momentum >= 0.0 && config_.momentum < 1.0)) {
    throw std::invalid_argument("momentum must lie in [0, 1)");
  }
  if (!(config_.weight_decay >= 0.0)) {
    throw std::invalid_argument("weight_decay must be nonnegative");
  }
}

void Sgd::step(std::span<ParamBlock* const> params) {
  if (velocity_.empty()) {
    velocity_.reserve(params.size());
    for (const ParamBlock* p : params) velocity_.emplace_back(p->value.rows(), p->value.cols());
  }
  if (velocity_.size() != params.size()) {
    throw DimensionError("Sgd::step: parameter count changed between steps");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    ParamBlock& p = *params[i];
    Matrix& v = velocity_[i];
    require_same_shape(v, p.value, "Sgd velocity");
    require_same_shape(p.grad, p.value, "ParamBlock gradient");
    auto vv = v.values();
    auto xv = p.value.values();
    auto gv = p.grad.values();
    for (std::size_t k = 0; k < vv.size(); ++k) {
      vv[k] = config_.momentum * vv[k] + gv[k] + config_.weight_decay * xv[k];
      xv[k] -= config_.learning_rate * vv[k];
    }
    p.zero_grad();
  }
}

GradCheckReport grad_check(const std::function<double()>& loss,
                           std::span<const NamedBlock> params, double h) {
  GradCheckReport report;
  for (const NamedBlock& nb : params) {
    BlockError be{nb.name, 0.0, 0};
    auto values = nb.block->value.values();
    auto grads = nb.block->grad.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss();
      values[i] = saved - h;
      const double down = loss();
      values[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("grad_check: non-finite loss while probing " + nb.name +
                           "[" + std::to_string(i) + "]");
      }
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = grads[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel > be.max_rel_error) {
        be.max_rel_error = rel;
        be.worst_index = i;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, be.max_rel_error);
    report.blocks.push_back(be);
  }
  return report;
}

}  // namespace wsgn
