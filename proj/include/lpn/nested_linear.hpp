#pragma once

#include <cstdint>
#include <vector>

#include "lpn/common.hpp"
#include "lpn/tensor.hpp"

namespace lpn {

struct FactorizationReport {
  double frobenius_error = 0.0;
  std::vector<double> spectrum;  // singular values, descending
};

// Rank-indexed re-parameterization of a linear map: W(g) = B_g A_g, where
// A_g / B_g are the first g rows / columns of the factors. The privilege knob
// active_rank selects the prefix; switching it copies no parameter data.
struct NestedLinear {
  Tensor A;  // r_max x d_in
  Tensor B;  // d_out x r_max
  int64_t r_max = 0;
  int64_t active_rank = 0;

  int64_t d_in() const { return A.cols(); }
  int64_t d_out() const { return B.rows(); }

  void set_privilege(int64_t g) {
    if (g < 0 || g > r_max)
      throw ArgumentError("set_privilege: rank " + std::to_string(g) +
                          " out of range [0, " + std::to_string(r_max) + "]");
    active_rank = g;
  }
};

struct SvdFactors {
  Tensor A;
  Tensor B;
  FactorizationReport report;
};

// Best rank-r Frobenius approximation of W, factors ordered by descending
// singular value so every prefix is itself the best nested approximation.
// Singular-value mass is split symmetrically: A = S^(1/2) V^T, B = U S^(1/2).
SvdFactors truncated_svd(const Tensor& W, int64_t r);

NestedLinear make_nested_linear(const Tensor& W, int64_t r_max);

// Materialized W(g) = sum_{i<g} B[:,i] A[i,:].
Tensor effective_weight(const NestedLinear& layer, int64_t g);

// x [n x d_in] -> [n x d_out] as two skinny products, W(g) never materialized.
Tensor nested_forward(const NestedLinear& layer, const Tensor& x, int64_t g);

// Full singular spectrum of a dense matrix (descending).
std::vector<double> singular_values(const Tensor& W);

}  // namespace lpn
