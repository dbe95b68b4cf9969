#include "lpn/tape.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace lpn {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using CMatMap = Eigen::Map<const Mat>;

CMatMap as_mat(const Tensor& t) { return CMatMap(t.data.data(), t.rows(), t.cols()); }
MatMap as_mat(Tensor& t) { return MatMap(t.data.data(), t.rows(), t.cols()); }

constexpr double kInvSqrt2 = 0.7071067811865476;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

}  // namespace

NodeRef Tape::make(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  // allocate eagerly so backward closures can read a zero grad even when no
  // downstream op ever wrote into it (e.g. behind a rank-0 nested layer)
  if (requires_grad && recording_) n->ensure_grad();
  return n;
}

NodeRef Tape::constant(Tensor v) { return make(std::move(v), false); }

NodeRef Tape::leaf(Tensor v) {
  auto n = make(std::move(v), true);
  n->ensure_grad();
  return n;
}

NodeRef Tape::param(ParameterStore& store, const std::string& name) {
  Parameter& p = store.get(name);
  auto n = make(p.value, true);
  n->ensure_grad();
  if (recording_) {
    bindings_.emplace_back(n, &p);
    stores_.insert(&store);
  }
  return n;
}

NodeRef Tape::param(Parameter& p) {
  auto n = make(p.value, true);
  n->ensure_grad();
  if (recording_) bindings_.emplace_back(n, &p);
  return n;
}

NodeRef Tape::matmul(const NodeRef& a, const NodeRef& b) {
  if (a->value.cols() != b->value.rows())
    throw ShapeError("matmul: inner dimensions disagree, " + a->value.shape_str() +
                     " vs " + b->value.shape_str());
  Tensor out = Tensor::zeros({a->value.rows(), b->value.cols()});
  as_mat(out).noalias() = as_mat(a->value) * as_mat(b->value);
  auto n = make(std::move(out), a->requires_grad || b->requires_grad);
  if (n->requires_grad)
    record([a, b, n] {
      if (a->requires_grad) {
        a->ensure_grad();
        as_mat(a->grad).noalias() += as_mat(n->grad) * as_mat(b->value).transpose();
      }
      if (b->requires_grad) {
        b->ensure_grad();
        as_mat(b->grad).noalias() += as_mat(a->value).transpose() * as_mat(n->grad);
      }
    });
  return n;
}

NodeRef Tape::matmul_nt(const NodeRef& a, const NodeRef& b) {
  if (a->value.cols() != b->value.cols())
    throw ShapeError("matmul_nt: inner dimensions disagree, " + a->value.shape_str() +
                     " vs " + b->value.shape_str());
  Tensor out = Tensor::zeros({a->value.rows(), b->value.rows()});
  as_mat(out).noalias() = as_mat(a->value) * as_mat(b->value).transpose();
  auto n = make(std::move(out), a->requires_grad || b->requires_grad);
  if (n->requires_grad)
    record([a, b, n] {
      if (a->requires_grad) {
        a->ensure_grad();
        as_mat(a->grad).noalias() += as_mat(n->grad) * as_mat(b->value);
      }
      if (b->requires_grad) {
        b->ensure_grad();
        as_mat(b->grad).noalias() += as_mat(n->grad).transpose() * as_mat(a->value);
      }
    });
  return n;
}

NodeRef Tape::add(const NodeRef& a, const NodeRef& b) {
  require_same_shape(a->value, b->value, "add");
  Tensor out = a->value;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->value.data[i];
  auto n = make(std::move(out), a->requires_grad || b->requires_grad);
  if (n->requires_grad)
    record([a, b, n] {
      for (auto* in : {a.get(), b.get()}) {
        if (!in->requires_grad) continue;
        in->ensure_grad();
        for (size_t i = 0; i < in->grad.data.size(); ++i)
          in->grad.data[i] += n->grad.data[i];
      }
    });
  return n;
}

NodeRef Tape::add_rowvec(const NodeRef& a, const NodeRef& v) {
  if (v->value.numel() != a->value.cols())
    throw ShapeError("add_rowvec: vector length " + v->value.shape_str() +
                     " does not match columns of " + a->value.shape_str());
  Tensor out = a->value;
  int64_t m = out.rows(), c = out.cols();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < c; ++j) out.data[i * c + j] += v->value.data[j];
  auto n = make(std::move(out), a->requires_grad || v->requires_grad);
  if (n->requires_grad)
    record([a, v, n, m, c] {
      if (a->requires_grad) {
        a->ensure_grad();
        for (size_t i = 0; i < a->grad.data.size(); ++i)
          a->grad.data[i] += n->grad.data[i];
      }
      if (v->requires_grad) {
        v->ensure_grad();
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < c; ++j) v->grad.data[j] += n->grad.data[i * c + j];
      }
    });
  return n;
}

NodeRef Tape::scale(const NodeRef& a, double s) {
  Tensor out = a->value;
  for (double& x : out.data) x *= s;
  auto n = make(std::move(out), a->requires_grad);
  if (n->requires_grad)
    record([a, n, s] {
      a->ensure_grad();
      for (size_t i = 0; i < a->grad.data.size(); ++i)
        a->grad.data[i] += s * n->grad.data[i];
    });
  return n;
}

NodeRef Tape::gelu(const NodeRef& a) {
  Tensor out = a->value;
  for (double& x : out.data) x = x * 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  auto n = make(std::move(out), a->requires_grad);
  if (n->requires_grad)
    record([a, n] {
      a->ensure_grad();
      for (size_t i = 0; i < a->grad.data.size(); ++i) {
        double x = a->value.data[i];
        double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        a->grad.data[i] += (phi + x * pdf) * n->grad.data[i];
      }
    });
  return n;
}

NodeRef Tape::row_softmax(const NodeRef& a) {
  Tensor out = a->value;
  int64_t m = out.rows(), c = out.cols();
  for (int64_t i = 0; i < m; ++i) {
    double* row = out.data.data() + i * c;
    double mx = row[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - mx);
      s += row[j];
    }
    for (int64_t j = 0; j < c; ++j) row[j] /= s;
  }
  auto n = make(std::move(out), a->requires_grad);
  if (n->requires_grad)
    record([a, n, m, c] {
      a->ensure_grad();
      for (int64_t i = 0; i < m; ++i) {
        const double* y = n->value.data.data() + i * c;
        const double* g = n->grad.data.data() + i * c;
        double dot = 0.0;
        for (int64_t j = 0; j < c; ++j) dot += g[j] * y[j];
        double* da = a->grad.data.data() + i * c;
        for (int64_t j = 0; j < c; ++j) da[j] += (g[j] - dot) * y[j];
      }
    });
  return n;
}

NodeRef Tape::layer_norm(const NodeRef& x, const NodeRef& gain, const NodeRef& bias) {
  int64_t c = x->value.cols();
  if (gain->value.numel() != c || bias->value.numel() != c)
    throw ShapeError("layer_norm: gain/bias length must match last dimension " +
                     x->value.shape_str());
  int64_t m = x->value.rows();
  Tensor out = Tensor::zeros(x->value.shape);
  Tensor xhat = Tensor::zeros(x->value.shape);
  std::vector<double> inv_std(m);
  for (int64_t i = 0; i < m; ++i) {
    const double* row = x->value.data.data() + i * c;
    double mu = 0.0;
    for (int64_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    double is = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_std[i] = is;
    for (int64_t j = 0; j < c; ++j) {
      double xh = (row[j] - mu) * is;
      xhat.data[i * c + j] = xh;
      out.data[i * c + j] = gain->value.data[j] * xh + bias->value.data[j];
    }
  }
  auto n = make(std::move(out),
                x->requires_grad || gain->requires_grad || bias->requires_grad);
  if (n->requires_grad) {
    auto xh = std::make_shared<Tensor>(std::move(xhat));
    auto is = std::make_shared<std::vector<double>>(std::move(inv_std));
    record([x, gain, bias, n, xh, is, m, c] {
      for (int64_t i = 0; i < m; ++i) {
        const double* g = n->grad.data.data() + i * c;
        const double* xhr = xh->data.data() + i * c;
        if (gain->requires_grad) {
          gain->ensure_grad();
          for (int64_t j = 0; j < c; ++j) gain->grad.data[j] += g[j] * xhr[j];
        }
        if (bias->requires_grad) {
          bias->ensure_grad();
          for (int64_t j = 0; j < c; ++j) bias->grad.data[j] += g[j];
        }
        if (x->requires_grad) {
          x->ensure_grad();
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          // dxhat_j = g_j * gain_j
          for (int64_t j = 0; j < c; ++j) {
            double dxh = g[j] * gain->value.data[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xhr[j];
          }
          mean_dxh /= static_cast<double>(c);
          mean_dxh_xh /= static_cast<double>(c);
          double* dx = x->grad.data.data() + i * c;
          for (int64_t j = 0; j < c; ++j) {
            double dxh = g[j] * gain->value.data[j];
            dx[j] += (*is)[i] * (dxh - mean_dxh - xhr[j] * mean_dxh_xh);
          }
        }
      }
    });
  }
  return n;
}

NodeRef Tape::cross_entropy(const NodeRef& logits, const std::vector<int>& targets) {
  int64_t b = logits->value.rows();
  int64_t v = logits->value.cols();
  if (static_cast<int64_t>(targets.size()) != b)
    throw ShapeError("cross_entropy: batch size mismatch");
  for (int t : targets)
    if (t < 0 || t >= v)
      throw ArgumentError("cross_entropy: target index " + std::to_string(t) +
                          " out of range [0, " + std::to_string(v) + ")");
  Tensor probs = Tensor::zeros(logits->value.shape);
  double loss = 0.0;
  for (int64_t i = 0; i < b; ++i) {
    const double* row = logits->value.data.data() + i * v;
    double mx = row[0];
    for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int64_t j = 0; j < v; ++j) s += std::exp(row[j] - mx);
    double lse = mx + std::log(s);
    loss += lse - row[targets[i]];
    for (int64_t j = 0; j < v; ++j)
      probs.data[i * v + j] = std::exp(row[j] - lse);
  }
  loss /= static_cast<double>(b);
  auto n = make(Tensor::scalar(loss), logits->requires_grad);
  if (n->requires_grad) {
    auto p = std::make_shared<Tensor>(std::move(probs));
    auto tg = std::make_shared<std::vector<int>>(targets);
    record([logits, n, p, tg, b, v] {
      logits->ensure_grad();
      double g = n->grad.data[0] / static_cast<double>(b);
      for (int64_t i = 0; i < b; ++i) {
        double* dl = logits->grad.data.data() + i * v;
        const double* pr = p->data.data() + i * v;
        for (int64_t j = 0; j < v; ++j) dl[j] += g * pr[j];
        dl[(*tg)[i]] -= g;
      }
    });
  }
  return n;
}

NodeRef Tape::embedding_gather(const NodeRef& table, const std::vector<int>& ids) {
  int64_t v = table->value.rows();
  int64_t d = table->value.cols();
  for (int id : ids)
    if (id < 0 || id >= v)
      throw ArgumentError("embedding_gather: id " + std::to_string(id) +
                          " out of range [0, " + std::to_string(v) + ")");
  int64_t t = static_cast<int64_t>(ids.size());
  Tensor out = Tensor::zeros({t, d});
  for (int64_t i = 0; i < t; ++i)
    std::copy_n(table->value.data.data() + ids[i] * d, d, out.data.data() + i * d);
  auto n = make(std::move(out), table->requires_grad);
  if (n->requires_grad) {
    auto idv = std::make_shared<std::vector<int>>(ids);
    record([table, n, idv, t, d] {
      table->ensure_grad();
      for (int64_t i = 0; i < t; ++i) {
        double* dst = table->grad.data.data() + (*idv)[i] * d;
        const double* src = n->grad.data.data() + i * d;
        for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return n;
}

NodeRef Tape::slice_cols(const NodeRef& a, int64_t c0, int64_t c1) {
  int64_t c = a->value.cols();
  if (c0 < 0 || c1 > c || c0 >= c1)
    throw ArgumentError("slice_cols: bad range [" + std::to_string(c0) + ", " +
                        std::to_string(c1) + ") for " + a->value.shape_str());
  int64_t m = a->value.rows(), w = c1 - c0;
  Tensor out = Tensor::zeros({m, w});
  for (int64_t i = 0; i < m; ++i)
    std::copy_n(a->value.data.data() + i * c + c0, w, out.data.data() + i * w);
  auto n = make(std::move(out), a->requires_grad);
  if (n->requires_grad)
    record([a, n, c0, m, w, c] {
      a->ensure_grad();
      for (int64_t i = 0; i < m; ++i) {
        double* dst = a->grad.data.data() + i * c + c0;
        const double* src = n->grad.data.data() + i * w;
        for (int64_t j = 0; j < w; ++j) dst[j] += src[j];
      }
    });
  return n;
}

NodeRef Tape::concat_cols(const std::vector<NodeRef>& parts) {
  if (parts.empty()) throw ArgumentError("concat_cols: empty input");
  int64_t m = parts[0]->value.rows();
  int64_t total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p->value.rows() != m) throw ShapeError("concat_cols: row count mismatch");
    total += p->value.cols();
    rg = rg || p->requires_grad;
  }
  Tensor out = Tensor::zeros({m, total});
  int64_t off = 0;
  for (const auto& p : parts) {
    int64_t w = p->value.cols();
    for (int64_t i = 0; i < m; ++i)
      std::copy_n(p->value.data.data() + i * w, w, out.data.data() + i * total + off);
    off += w;
  }
  auto n = make(std::move(out), rg);
  if (rg)
    record([parts, n, m, total] {
      int64_t off2 = 0;
      for (const auto& p : parts) {
        int64_t w = p->value.cols();
        if (p->requires_grad) {
          p->ensure_grad();
          for (int64_t i = 0; i < m; ++i) {
            double* dst = p->grad.data.data() + i * w;
            const double* src = n->grad.data.data() + i * total + off2;
            for (int64_t j = 0; j < w; ++j) dst[j] += src[j];
          }
        }
        off2 += w;
      }
    });
  return n;
}

NodeRef Tape::take_row(const NodeRef& a, int64_t i) {
  if (i < 0 || i >= a->value.rows())
    throw ArgumentError("take_row: index " + std::to_string(i) + " out of range for " +
                        a->value.shape_str());
  int64_t c = a->value.cols();
  Tensor out = Tensor::zeros({1, c});
  std::copy_n(a->value.data.data() + i * c, c, out.data.data());
  auto n = make(std::move(out), a->requires_grad);
  if (n->requires_grad)
    record([a, n, i, c] {
      a->ensure_grad();
      for (int64_t j = 0; j < c; ++j) a->grad.data[i * c + j] += n->grad.data[j];
    });
  return n;
}

NodeRef Tape::concat_rows(const std::vector<NodeRef>& parts) {
  if (parts.empty()) throw ArgumentError("concat_rows: empty input");
  int64_t c = parts[0]->value.cols();
  int64_t m = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p->value.cols() != c) throw ShapeError("concat_rows: column count mismatch");
    m += p->value.rows();
    rg = rg || p->requires_grad;
  }
  Tensor out = Tensor::zeros({m, c});
  int64_t off = 0;
  for (const auto& p : parts) {
    std::copy(p->value.data.begin(), p->value.data.end(), out.data.begin() + off);
    off += p->value.numel();
  }
  auto n = make(std::move(out), rg);
  if (rg)
    record([parts, n] {
      int64_t off2 = 0;
      for (const auto& p : parts) {
        if (p->requires_grad) {
          p->ensure_grad();
          for (int64_t j = 0; j < p->value.numel(); ++j)
            p->grad.data[j] += n->grad.data[off2 + j];
        }
        off2 += p->value.numel();
      }
    });
  return n;
}

NodeRef Tape::causal_mask(const NodeRef& a) {
  if (a->value.rows() != a->value.cols())
    throw ShapeError("causal_mask: expects square scores, got " + a->value.shape_str());
  Tensor out = a->value;
  int64_t m = out.rows();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = i + 1; j < m; ++j) out.data[i * m + j] = -1e30;
  auto n = make(std::move(out), a->requires_grad);
  if (n->requires_grad)
    record([a, n, m] {
      a->ensure_grad();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j <= i; ++j)
          a->grad.data[i * m + j] += n->grad.data[i * m + j];
    });
  return n;
}

NodeRef Tape::nlpn_matmul(const NodeRef& x, const NodeRef& A, const NodeRef& B,
                          int64_t g) {
  int64_t r_max = A->value.rows();
  int64_t d_in = A->value.cols();
  int64_t d_out = B->value.rows();
  if (B->value.cols() != r_max)
    throw ShapeError("nlpn_matmul: factor shapes disagree, A " + A->value.shape_str() +
                     " vs B " + B->value.shape_str());
  if (g < 0 || g > r_max)
    throw ArgumentError("nlpn_matmul: rank " + std::to_string(g) +
                        " out of range [0, " + std::to_string(r_max) + "]");
  if (x->value.cols() != d_in)
    throw ShapeError("nlpn_matmul: input " + x->value.shape_str() +
                     " does not match A " + A->value.shape_str());
  int64_t m = x->value.rows();
  Tensor out = Tensor::zeros({m, d_out});
  Tensor hidden = Tensor::zeros({m, std::max<int64_t>(g, 1)});
  if (g > 0) {
    CMatMap xm(x->value.data.data(), m, d_in);
    CMatMap am(A->value.data.data(), r_max, d_in);
    CMatMap bm(B->value.data.data(), d_out, r_max);
    MatMap hm(hidden.data.data(), m, g);
    hm.noalias() = xm * am.topRows(g).transpose();
    MatMap om(out.data.data(), m, d_out);
    om.noalias() = hm * bm.leftCols(g).transpose();
  }
  auto n = make(std::move(out),
                x->requires_grad || A->requires_grad || B->requires_grad);
  if (n->requires_grad && g > 0) {
    auto h = std::make_shared<Tensor>(std::move(hidden));
    record([x, A, B, n, h, g, m, d_in, d_out, r_max] {
      CMatMap gm(n->grad.data.data(), m, d_out);
      CMatMap am(A->value.data.data(), r_max, d_in);
      CMatMap bm(B->value.data.data(), d_out, r_max);
      CMatMap hm(h->data.data(), m, g);
      Mat dh = gm * bm.leftCols(g);  // m x g
      if (B->requires_grad) {
        B->ensure_grad();
        MatMap dB(B->grad.data.data(), d_out, r_max);
        dB.leftCols(g).noalias() += gm.transpose() * hm;
      }
      if (A->requires_grad) {
        A->ensure_grad();
        MatMap dA(A->grad.data.data(), r_max, d_in);
        CMatMap xm(x->value.data.data(), m, d_in);
        dA.topRows(g).noalias() += dh.transpose() * xm;
      }
      if (x->requires_grad) {
        x->ensure_grad();
        MatMap dx(x->grad.data.data(), m, d_in);
        dx.noalias() += dh * am.topRows(g);
      }
    });
  }
  return n;
}

NodeRef Tape::mul(const NodeRef& a, const NodeRef& b) {
  require_same_shape(a->value, b->value, "mul");
  Tensor out = a->value;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b->value.data[i];
  auto n = make(std::move(out), a->requires_grad || b->requires_grad);
  if (n->requires_grad)
    record([a, b, n] {
      if (a->requires_grad) {
        a->ensure_grad();
        for (size_t i = 0; i < a->grad.data.size(); ++i)
          a->grad.data[i] += n->grad.data[i] * b->value.data[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (size_t i = 0; i < b->grad.data.size(); ++i)
          b->grad.data[i] += n->grad.data[i] * a->value.data[i];
      }
    });
  return n;
}

NodeRef Tape::exp(const NodeRef& a) {
  Tensor out = a->value;
  for (double& x : out.data) x = std::exp(x);
  auto n = make(std::move(out), a->requires_grad);
  if (n->requires_grad)
    record([a, n] {
      a->ensure_grad();
      for (size_t i = 0; i < a->grad.data.size(); ++i)
        a->grad.data[i] += n->grad.data[i] * n->value.data[i];
    });
  return n;
}

NodeRef Tape::neg(const NodeRef& a) { return scale(a, -1.0); }

NodeRef Tape::pick(const NodeRef& a, int64_t flat_index) {
  if (flat_index < 0 || flat_index >= a->value.numel())
    throw ArgumentError("pick: index " + std::to_string(flat_index) +
                        " out of range for " + a->value.shape_str());
  auto n = make(Tensor::scalar(a->value.data[flat_index]), a->requires_grad);
  if (n->requires_grad)
    record([a, n, flat_index] {
      a->ensure_grad();
      a->grad.data[flat_index] += n->grad.data[0];
    });
  return n;
}

NodeRef Tape::sum(const NodeRef& a) {
  double s = 0.0;
  for (double x : a->value.data) s += x;
  auto n = make(Tensor::scalar(s), a->requires_grad);
  if (n->requires_grad)
    record([a, n] {
      a->ensure_grad();
      for (double& g : a->grad.data) g += n->grad.data[0];
    });
  return n;
}

void Tape::backward(const NodeRef& loss) {
  if (!recording_) throw StateError("backward: tape is not recording");
  if (consumed_)
    throw StateError("backward: tape already consumed; run a new forward pass");
  if (loss->value.numel() != 1)
    throw ArgumentError("backward: loss must be scalar, got " +
                        loss->value.shape_str());
  consumed_ = true;
  loss->ensure_grad();
  loss->grad.data[0] = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  for (auto& [node, p] : bindings_) {
    if (node->grad.data.empty()) continue;
    for (size_t i = 0; i < p->grad.data.size(); ++i)
      p->grad.data[i] += node->grad.data[i];
  }
  for (ParameterStore* s : stores_) s->mark_grads_populated();
}

}  // namespace lpn
