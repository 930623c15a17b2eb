#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wsgn {

// Thrown when operand shapes do not conform; the message carries both shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dense row-major matrix of doubles. Vectors are stored as 1 x n matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix row_vector(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  void fill(double v);
  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_string() const;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator*=(double s);

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Throws DimensionError naming `what` unless a and b have identical shapes.
void require_same_shape(const Matrix& a, const Matrix& b, const char* what);

// Column means over rows.
std::vector<double> column_means(const Matrix& m);

Matrix hadamard(const Matrix& a, const Matrix& b);

// Largest |a - b| over entries; shapes must match.
double max_abs_diff(const Matrix& a, const Matrix& b);

bool all_finite(const Matrix& m);

}  // namespace wsgn
