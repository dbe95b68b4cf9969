#include "lpn/nested_linear.hpp"

#include <Eigen/Core>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

namespace lpn {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Mat to_eigen(const Tensor& t) {
  return Eigen::Map<const Mat>(t.data.data(), t.rows(), t.cols());
}

Tensor from_eigen(const Mat& m) {
  Tensor t = Tensor::zeros({m.rows(), m.cols()});
  Eigen::Map<Mat>(t.data.data(), m.rows(), m.cols()) = m;
  return t;
}

}  // namespace

std::vector<double> singular_values(const Tensor& W) {
  Eigen::JacobiSVD<Mat> svd(to_eigen(W));
  std::vector<double> out(svd.singularValues().data(),
                          svd.singularValues().data() + svd.singularValues().size());
  return out;
}

SvdFactors truncated_svd(const Tensor& W, int64_t r) {
  int64_t d_out = W.rows();
  int64_t d_in = W.cols();
  int64_t min_dim = std::min(d_out, d_in);
  if (r < 1 || r > min_dim)
    throw ArgumentError("truncated_svd: rank " + std::to_string(r) +
                        " out of range [1, " + std::to_string(min_dim) + "] for " +
                        W.shape_str());
  if (!W.all_finite()) throw ArgumentError("truncated_svd: non-finite input");

  Eigen::JacobiSVD<Mat> svd(to_eigen(W), Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();

  SvdFactors out;
  out.report.spectrum.assign(s.data(), s.data() + s.size());
  double tail = 0.0;
  for (int64_t i = r; i < min_dim; ++i) tail += s[i] * s[i];
  out.report.frobenius_error = std::sqrt(tail);

  Mat a(r, d_in), b(d_out, r);
  for (int64_t i = 0; i < r; ++i) {
    double root = std::sqrt(s[i]);
    a.row(i) = root * svd.matrixV().col(i).transpose();
    b.col(i) = root * svd.matrixU().col(i);
  }
  out.A = from_eigen(a);
  out.B = from_eigen(b);
  return out;
}

NestedLinear make_nested_linear(const Tensor& W, int64_t r_max) {
  SvdFactors f = truncated_svd(W, r_max);
  NestedLinear layer;
  layer.A = std::move(f.A);
  layer.B = std::move(f.B);
  layer.r_max = r_max;
  layer.active_rank = r_max;
  return layer;
}

Tensor effective_weight(const NestedLinear& layer, int64_t g) {
  if (g < 0 || g > layer.r_max)
    throw ArgumentError("effective_weight: rank " + std::to_string(g) +
                        " out of range [0, " + std::to_string(layer.r_max) + "]");
  Tensor w = Tensor::zeros({layer.d_out(), layer.d_in()});
  if (g > 0) {
    Mat a = to_eigen(layer.A);
    Mat b = to_eigen(layer.B);
    Eigen::Map<Mat>(w.data.data(), w.rows(), w.cols()).noalias() =
        b.leftCols(g) * a.topRows(g);
  }
  return w;
}

Tensor nested_forward(const NestedLinear& layer, const Tensor& x, int64_t g) {
  if (g < 0 || g > layer.r_max)
    throw ArgumentError("nested_forward: rank " + std::to_string(g) +
                        " out of range [0, " + std::to_string(layer.r_max) + "]");
  if (x.cols() != layer.d_in())
    throw ShapeError("nested_forward: input " + x.shape_str() +
                     " does not match d_in " + std::to_string(layer.d_in()));
  Tensor out = Tensor::zeros({x.rows(), layer.d_out()});
  if (g > 0) {
    Mat xm = to_eigen(x);
    Mat a = to_eigen(layer.A);
    Mat b = to_eigen(layer.B);
    Mat h = xm * a.topRows(g).transpose();
    Eigen::Map<Mat>(out.data.data(), out.rows(), out.cols()).noalias() =
        h * b.leftCols(g).transpose();
  }
  return out;
}

}  // namespace lpn
