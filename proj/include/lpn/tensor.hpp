#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "lpn/common.hpp"

namespace lpn {

// Dense row-major tensor of 64-bit floats. Rank 1 or 2 in practice.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> shape) {
    Tensor t;
    t.shape = std::move(shape);
    t.data.assign(t.numel_of_shape(), 0.0);
    return t;
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Tensor t;
    int64_t m = static_cast<int64_t>(rows.size());
    int64_t n = m > 0 ? static_cast<int64_t>(rows.begin()->size()) : 0;
    t.shape = {m, n};
    t.data.reserve(m * n);
    for (const auto& r : rows) {
      if (static_cast<int64_t>(r.size()) != n)
        throw ShapeError("ragged row initializer");
      for (double v : r) t.data.push_back(v);
    }
    return t;
  }

  static Tensor vector_of(std::vector<double> v) {
    Tensor t;
    t.shape = {static_cast<int64_t>(v.size())};
    t.data = std::move(v);
    return t;
  }

  static Tensor scalar(double v) {
    Tensor t;
    t.shape = {1};
    t.data = {v};
    return t;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }

  int64_t numel_of_shape() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }

  int64_t rows() const { return shape.empty() ? 0 : shape[0]; }
  int64_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& at(int64_t i, int64_t j) { return data[i * cols() + j]; }
  double at(int64_t i, int64_t j) const { return data[i * cols() + j]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) os << "x";
      os << shape[i];
    }
    os << "]";
    return os.str();
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                     b.shape_str());
}

}  // namespace lpn
