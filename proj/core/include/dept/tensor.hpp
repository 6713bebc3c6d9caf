#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace dept {

/// Dense row-major tensor of 64-bit floats. Most tensors in this codebase are
/// matrices; 1-D data is stored as an (n x 1) column by convention.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(count(shape_)), 0.0);
  }

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int64_t> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = v;
    return t;
  }

  static Tensor scalar(double v) {
    Tensor t({1});
    t.data_[0] = v;
    return t;
  }

  static Tensor from(std::vector<int64_t> shape, std::vector<double> values) {
    if (count(shape) != static_cast<int64_t>(values.size()))
      throw std::invalid_argument("Tensor::from: shape does not match value count");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    return t;
  }

  /// 2-D literal, e.g. Tensor::matrix({{1,2},{3,4}}).
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const int64_t r = static_cast<int64_t>(rows.size());
    const int64_t c = r > 0 ? static_cast<int64_t>(rows.begin()->size()) : 0;
    Tensor t({r, c});
    int64_t i = 0;
    for (const auto& row : rows) {
      if (static_cast<int64_t>(row.size()) != c)
        throw std::invalid_argument("Tensor::matrix: ragged rows");
      for (double v : row) t.data_[static_cast<size_t>(i++)] = v;
    }
    return t;
  }

  const std::vector<int64_t>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }

  int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }

  /// Rows/cols of a matrix; a 1-D tensor is treated as a column.
  int64_t rows() const {
    if (shape_.empty()) return 0;
    return shape_[0];
  }
  int64_t cols() const {
    if (shape_.size() < 2) return shape_.empty() ? 0 : 1;
    int64_t c = 1;
    for (size_t i = 1; i < shape_.size(); ++i) c *= shape_[i];
    return c;
  }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double& at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * cols() + c)]; }
  double at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * cols() + c)]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  double item() const {
    if (numel() != 1) throw std::runtime_error("Tensor::item: tensor is not scalar");
    return data_[0];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(double v) {
    for (double& x : data_) x = v;
  }

  static int64_t count(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  static std::string shape_str(const std::vector<int64_t>& shape) {
    std::string s = "(";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + ")";
  }

 private:
  std::vector<int64_t> shape_;
  std::vector<double> data_;
};

}  // namespace dept
