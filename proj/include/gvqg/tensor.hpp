#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gvqg {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Row-major dense matrix of doubles. Vectors are 1 x n.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {
    if (rows < 0 || cols < 0) throw ShapeError("negative matrix dimension");
  }
  Matrix(int rows, int cols, std::vector<double> values) : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != static_cast<std::size_t>(rows) * cols)
      throw ShapeError("matrix value count does not match shape");
  }
  static Matrix row_vector(std::initializer_list<double> v) {
    return Matrix(1, static_cast<int>(v.size()), std::vector<double>(v));
  }
  static Matrix row_vector(std::span<const double> v) {
    return Matrix(1, static_cast<int>(v.size()), std::vector<double>(v.begin(), v.end()));
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double* row(int r) { return data_.data() + static_cast<std::size_t>(r) * cols_; }
  const double* row(int r) const { return data_.data() + static_cast<std::size_t>(r) * cols_; }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  void add_inplace(const Matrix& o) {
    if (!same_shape(o)) throw ShapeError("add_inplace shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  }

  std::string shape_str() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

bool all_finite(const Matrix& m);

}  // namespace gvqg
