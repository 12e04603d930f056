#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace stmixer {

namespace detail {

inline size_t checked_numel(const std::vector<int>& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor shape must be non-empty");
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive");
    n *= static_cast<size_t>(d);
  }
  return n;
}

}  // namespace detail

// Dense row-major tensor. The model runs on the float instantiation; the
// double instantiation compiles from the same code and is used by the
// finite-difference checks, where float rounding would drown the signal.
template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;

  explicit Tensor(std::vector<int> s)
      : shape(std::move(s)), data(detail::checked_numel(shape), T(0)) {}

  Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (detail::checked_numel(shape) != data.size()) {
      throw std::invalid_argument("tensor data size does not match shape " + shape_str());
    }
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, T v) {
    Tensor t(std::move(s));
    t.fill(v);
    return t;
  }

  // 1 x n row vector, convenient in tests and for embeddings.
  static Tensor row(std::vector<T> v) {
    const int n = static_cast<int>(v.size());
    return Tensor({1, n}, std::move(v));
  }

  size_t numel() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }

  int rows() const { return rank() == 2 ? shape[0] : 1; }
  int cols() const { return rank() == 2 ? shape[1] : shape[0]; }

  T& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
  const T& operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }
  T& operator[](size_t i) { return data[i]; }
  const T& operator[](size_t i) const { return data[i]; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }
  void zero() { fill(T(0)); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (T v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) os << ',';
      os << shape[i];
    }
    os << ']';
    return os.str();
  }
};

// A trainable (or frozen) tensor with its gradient accumulator.
template <class T>
struct ParamSlot {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  ParamSlot() = default;

  ParamSlot(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor<T>::zeros(value.shape)) {}

  void reset_grad() { grad.zero(); }
};

}  // namespace stmixer
