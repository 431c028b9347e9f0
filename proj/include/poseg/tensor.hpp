#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "poseg/errors.hpp"

namespace poseg {

// Dense row-major tensor. Deliberately minimal: shape + flat storage. All
// layout-aware math lives in the kernels and tape ops, not here.
template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(count(shape), T(0)) {}
  Tensor(std::vector<int> s, std::vector<T> data) : shape(std::move(s)), v(std::move(data)) {
    if (int64_t(v.size()) != count(shape)) throw ShapeMismatch("tensor data does not match shape " + shape_str());
  }

  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, T value) {
    Tensor t(std::move(s));
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
  }
  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  int64_t numel() const { return int64_t(v.size()); }
  int ndim() const { return int(shape.size()); }
  int dim(int i) const { return shape[size_t(i)]; }

  // 2-D conveniences (most tape ops are matrix-shaped).
  int rows() const { return shape.at(0); }
  int cols() const { return shape.at(1); }
  T& at(int r, int c) { return v[size_t(r) * cols() + c]; }
  const T& at(int r, int c) const { return v[size_t(r) * cols() + c]; }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const;

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> o;
    o.shape = shape;
    o.v.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) o.v[i] = U(v[i]);
    return o;
  }
};

inline std::string shape_to_string(const std::vector<int>& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

template <class T>
std::string Tensor<T>::shape_str() const {
  return shape_to_string(shape);
}

template <class T>
void require_shape(const Tensor<T>& t, const std::vector<int>& s, const char* what) {
  if (t.shape != s) {
    throw ShapeMismatch(std::string(what) + ": got " + t.shape_str() + ", want " + shape_to_string(s));
  }
}

}  // namespace poseg
