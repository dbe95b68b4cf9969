#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lpn/common.hpp"
#include "lpn/tensor.hpp"

namespace lpn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Named parameters plus optimizer state. References returned by add()/get()
// stay valid for the lifetime of the store (std::map storage).
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor init) {
    if (params_.count(name)) throw ArgumentError("duplicate parameter: " + name);
    Parameter p;
    p.name = name;
    p.grad = Tensor::zeros(init.shape);
    p.adam_m = Tensor::zeros(init.shape);
    p.adam_v = Tensor::zeros(init.shape);
    p.value = std::move(init);
    auto [it, ok] = params_.emplace(name, std::move(p));
    (void)ok;
    return it->second;
  }

  Parameter& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ArgumentError("unknown parameter: " + name);
    return it->second;
  }

  const Parameter& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ArgumentError("unknown parameter: " + name);
    return it->second;
  }

  bool has(const std::string& name) const { return params_.count(name) != 0; }

  void remove(const std::string& name) {
    if (!params_.erase(name)) throw ArgumentError("unknown parameter: " + name);
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [k, v] : params_) out.push_back(k);
    return out;
  }

  void zero_grad() {
    for (auto& [k, p] : params_) p.grad.fill(0.0);
    grads_populated_ = false;
  }

  void mark_grads_populated() { grads_populated_ = true; }
  bool grads_populated() const { return grads_populated_; }

  int64_t step_count() const { return step_; }
  void set_step_count(int64_t s) { step_ = s; }

  void adam_step(const AdamConfig& cfg) {
    if (!grads_populated_)
      throw StateError("adam_step: no gradients populated since last step");
    step_ += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
    for (auto& [k, p] : params_) {
      for (size_t i = 0; i < p.value.data.size(); ++i) {
        double g = p.grad.data[i];
        double m = cfg.beta1 * p.adam_m.data[i] + (1.0 - cfg.beta1) * g;
        double v = cfg.beta2 * p.adam_v.data[i] + (1.0 - cfg.beta2) * g * g;
        p.adam_m.data[i] = m;
        p.adam_v.data[i] = v;
        double mhat = m / bc1;
        double vhat = v / bc2;
        p.value.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
      }
      p.grad.fill(0.0);
    }
    grads_populated_ = false;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  size_t size() const { return params_.size(); }

 private:
  std::map<std::string, Parameter> params_;
  int64_t step_ = 0;
  bool grads_populated_ = false;
};

}  // namespace lpn
