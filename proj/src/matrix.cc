#include "wsgn/matrix.h"

#include <algorithm>
#include <cmath>

namespace wsgn {

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() ? rows.begin()->size() : 0) {
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("ragged initializer list");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::row_vector(std::span<const double> values) {
  Matrix m(1, values.size());
  std::copy(values.begin(), values.end(), m.data_.begin());
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Matrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Matrix& Matrix::operator+=(const Matrix& other) {
  require_same_shape(*this, other, "matrix add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": shape " + a.shape_string() +
                         " does not match " + b.shape_string());
  }
}

std::vector<double> column_means(const Matrix& m) {
  std::vector<double> out(m.cols(), 0.0);
  if (m.rows() == 0) return out;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out[c] += m(r, c);
  }
  for (double& v : out) v /= static_cast<double>(m.rows());
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix out(a.rows(), a.cols());
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];
  return out;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double worst = 0.0;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    worst = std::max(worst, std::abs(av[i] - bv[i]));
  }
  return worst;
}

bool all_finite(const Matrix& m) {
  return std::all_of(m.values().begin(), m.values().end(),
                     [](double v) { return std::isfinite(v); });
}

}  // namespace wsgn
