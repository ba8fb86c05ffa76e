#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <initializer_list>
#include <vector>

namespace v2xcalib::nn {

using Shape = std::vector<int>;

/// Raised on any shape or argument mismatch; the message names the op.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

template <typename S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major n-d array. Plain value type; copying copies the buffer.
template <typename S>
class Tensor {
 public:
  using Scalar = S;
  // Aligned so vectorized kernels take the same path, and round the same
  // way, for every allocation.
  using Storage = std::vector<S, Eigen::aligned_allocator<S>>;

  Tensor() = default;
  explicit Tensor(Shape shape, S fill = S(0)) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    check_dims();
  }
  Tensor(Shape shape, std::initializer_list<S> values) : Tensor(std::move(shape), std::vector<S>(values)) {}
  template <typename Alloc>
  Tensor(Shape shape, const std::vector<S, Alloc>& values) : shape_(std::move(shape)), data_(values.begin(), values.end()) {
    check_dims();
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("Tensor: " + std::to_string(data_.size()) + " values for shape " + shape_str(shape_));
    }
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s), S(0)); }
  static Tensor ones(Shape s) { return Tensor(std::move(s), S(1)); }
  static Tensor scalar(S v) { return Tensor(Shape{}, v); }

  template <typename Rng>
  static Tensor randn(Shape s, Rng& rng, S stddev = S(1), S mean = S(0)) {
    Tensor t(std::move(s));
    std::normal_distribution<double> d(static_cast<double>(mean), static_cast<double>(stddev));
    for (S& v : t.data_) v = static_cast<S>(d(rng));
    return t;
  }

  template <typename Rng>
  static Tensor uniform(Shape s, Rng& rng, S lo, S hi) {
    Tensor t(std::move(s));
    std::uniform_real_distribution<double> d(static_cast<double>(lo), static_cast<double>(hi));
    for (S& v : t.data_) v = static_cast<S>(d(rng));
    return t;
  }

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i < 0 ? i + ndim() : i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  Storage& values() { return data_; }
  const Storage& values() const { return data_; }

  S& operator[](std::size_t i) { return data_[i]; }
  const S& operator[](std::size_t i) const { return data_[i]; }

  /// Value of a single-element tensor.
  S item() const {
    if (data_.size() != 1) throw ShapeError("Tensor::item: tensor has " + std::to_string(data_.size()) + " elements");
    return data_[0];
  }

  Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> array() { return {data_.data(), static_cast<Eigen::Index>(size())}; }
  Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> array() const {
    return {data_.data(), static_cast<Eigen::Index>(size())};
  }

  Eigen::Map<RowMatrix<S>> matrix(Eigen::Index rows, Eigen::Index cols) {
    check_matrix(rows, cols);
    return {data_.data(), rows, cols};
  }
  Eigen::Map<const RowMatrix<S>> matrix(Eigen::Index rows, Eigen::Index cols) const {
    check_matrix(rows, cols);
    return {data_.data(), rows, cols};
  }

  Tensor reshaped(Shape s) const {
    if (shape_size(s) != size()) {
      throw ShapeError("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(s));
    }
    return Tensor(std::move(s), data_);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](S v) { return std::isfinite(v); });
  }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename T>
  Tensor<T> cast() const {
    std::vector<T> v(data_.begin(), data_.end());
    return Tensor<T>(shape_, std::move(v));
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  void check_dims() const {
    for (int d : shape_) {
      if (d < 0) throw ShapeError("Tensor: negative extent in " + shape_str(shape_));
    }
  }
  void check_matrix(Eigen::Index rows, Eigen::Index cols) const {
    if (static_cast<std::size_t>(rows * cols) != size()) {
      throw ShapeError("Tensor::matrix: " + std::to_string(rows) + "x" + std::to_string(cols) + " view of " +
                       shape_str(shape_));
    }
  }

  Shape shape_;
  Storage data_;
};

}  // namespace v2xcalib::nn
