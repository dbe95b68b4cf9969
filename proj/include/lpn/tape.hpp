#pragma once

#include <functional>
#include <memory>
#include <set>
#include <utility>
#include <vector>

#include "lpn/params.hpp"
#include "lpn/tensor.hpp"

namespace lpn {

struct Node {
  Tensor value;
  Tensor grad;  // sized lazily, only when needed
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.data.empty()) {
      grad.shape = value.shape;
      grad.data.assign(value.data.size(), 0.0);
    }
  }
};

using NodeRef = std::shared_ptr<Node>;

// Dynamic tape: rebuilt on every forward pass. Ops record their backward
// closures in creation order; backward() replays them in reverse exactly once.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  NodeRef constant(Tensor v);
  NodeRef leaf(Tensor v);  // standalone differentiable leaf (tests, probes)
  NodeRef param(ParameterStore& store, const std::string& name);
  NodeRef param(Parameter& p);

  NodeRef matmul(const NodeRef& a, const NodeRef& b);
  NodeRef matmul_nt(const NodeRef& a, const NodeRef& b);  // a * b^T
  NodeRef add(const NodeRef& a, const NodeRef& b);
  NodeRef add_rowvec(const NodeRef& a, const NodeRef& v);
  NodeRef scale(const NodeRef& a, double c);
  NodeRef gelu(const NodeRef& a);
  NodeRef row_softmax(const NodeRef& a);
  NodeRef layer_norm(const NodeRef& x, const NodeRef& gain, const NodeRef& bias);
  NodeRef cross_entropy(const NodeRef& logits, const std::vector<int>& targets);
  NodeRef embedding_gather(const NodeRef& table, const std::vector<int>& ids);
  NodeRef slice_cols(const NodeRef& a, int64_t c0, int64_t c1);
  NodeRef concat_cols(const std::vector<NodeRef>& parts);
  NodeRef take_row(const NodeRef& a, int64_t i);
  NodeRef concat_rows(const std::vector<NodeRef>& parts);
  NodeRef causal_mask(const NodeRef& a);
  // y = (x A_g^T) B_g^T without materializing W(g); grads touch only the
  // first g rows of A / columns of B.
  NodeRef nlpn_matmul(const NodeRef& x, const NodeRef& A, const NodeRef& B, int64_t g);
  NodeRef mul(const NodeRef& a, const NodeRef& b);
  NodeRef exp(const NodeRef& a);
  NodeRef neg(const NodeRef& a);
  NodeRef pick(const NodeRef& a, int64_t flat_index);
  NodeRef sum(const NodeRef& a);

  void backward(const NodeRef& loss);

  bool recording() const { return recording_; }

 private:
  NodeRef make(Tensor value, bool requires_grad);
  void record(std::function<void()> fn) {
    if (recording_) ops_.push_back(std::move(fn));
  }

  bool recording_;
  bool consumed_ = false;
  std::vector<std::function<void()>> ops_;
  std::vector<std::pair<NodeRef, Parameter*>> bindings_;
  std::set<ParameterStore*> stores_;
};

constexpr double kLayerNormEps = 1e-5;

}  // namespace lpn
