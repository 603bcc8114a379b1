#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "ssmmt/common.hpp"

namespace ssmmt {

// Dense row-major tensor. The toolkit works almost entirely with rank-2
// shapes; rank-1 values are carried as 1xN.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;
  bool requires_grad = false;

  Tensor() = default;
  Tensor(int r, int c, T fill = T(0)) : shape{r, c}, data(size_t(r) * size_t(c), fill) {}

  static Tensor zeros_like(const Tensor& o) {
    Tensor t;
    t.shape = o.shape;
    t.data.assign(o.data.size(), T(0));
    return t;
  }

  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  size_t numel() const { return data.size(); }

  T& at(int r, int c) { return data[size_t(r) * size_t(cols()) + size_t(c)]; }
  const T& at(int r, int c) const { return data[size_t(r) * size_t(cols()) + size_t(c)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (const T& v : data) {
      if (!std::isfinite(double(v))) return false;
    }
    return true;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

template <typename T>
Tensor<T> tensor_from(std::vector<int> shape, std::vector<T> data) {
  size_t n = 1;
  for (int d : shape) n *= size_t(d);
  if (n != data.size()) throw UsageError("tensor_from: shape/data mismatch");
  Tensor<T> t;
  t.shape = std::move(shape);
  t.data = std::move(data);
  return t;
}

template <typename T>
Tensor<T> random_normal(int r, int c, Rng& rng, double stddev) {
  Tensor<T> t(r, c);
  for (auto& v : t.data) v = T(rng.normal() * stddev);
  return t;
}

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& in) {
  Tensor<To> out;
  out.shape = in.shape;
  out.requires_grad = in.requires_grad;
  out.data.reserve(in.data.size());
  for (const From& v : in.data) out.data.push_back(To(v));
  return out;
}

}  // namespace ssmmt
