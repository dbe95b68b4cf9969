#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lpn/nested_linear.hpp"
#include "lpn/params.hpp"
#include "lpn/tape.hpp"
#include "lpn/taskgen.hpp"

namespace lpn {

enum class Family { MlpUp, MlpDown, AttnQ, AttnK, AttnV, AttnO };
std::string family_name(Family f);
Family family_from_name(const std::string& name);
inline const std::vector<Family> kMlpFamilies = {Family::MlpUp, Family::MlpDown};

struct ModelConfig {
  int64_t vocab_size = 0;  // 0 = use the task tokenizer's vocabulary
  int64_t d_model = 64;
  int64_t n_layers = 2;
  int64_t n_heads = 4;
  int64_t d_mlp = 128;
  int64_t max_seq_len = 96;
  int64_t nlpn_r_max = 32;
  std::vector<Family> nlpn_targets = {Family::MlpUp, Family::MlpDown};

  void validate() const;
  int64_t head_dim() const { return d_model / n_heads; }
};

struct ModuleCoordinate {
  int block = 0;
  Family family = Family::MlpUp;

  auto operator<=>(const ModuleCoordinate&) const = default;
  std::string key() const { return "b" + std::to_string(block) + "." + family_name(family); }
};

// Map from module coordinate to active rank; the enforcer's action. A missing
// override means the coordinate runs at default_rank (clamped to its r_max).
struct ControlVector {
  int64_t default_rank = 0;
  std::map<ModuleCoordinate, int64_t> overrides;

  static ControlVector global(int64_t g) { return ControlVector{g, {}}; }
  int64_t rank_for(const ModuleCoordinate& c) const {
    auto it = overrides.find(c);
    return it == overrides.end() ? default_rank : it->second;
  }
};

struct PredictResult {
  bool label = false;
  double prob_true = 0.0;
  double prob_false = 0.0;
  double uncertainty() const { return 1.0 - std::max(prob_true, prob_false); }
};

// Decoder-only pre-LN transformer whose targeted linear maps can be swapped
// for nested factors (model surgery) and driven per-request by a ControlVector.
class Model {
 public:
  Model(ModelConfig config, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  void apply_surgery(int64_t r_max, const std::vector<Family>& targets);
  bool surgered() const { return !nlpn_coords_.empty(); }
  const std::set<ModuleCoordinate>& nlpn_coords() const { return nlpn_coords_; }
  int64_t r_max() const { return surgery_r_max_; }
  void restore_surgery_registry(int64_t r_max, const std::set<ModuleCoordinate>& coords);

  // Full control: every coordinate at its maximum rank.
  ControlVector full_privilege() const { return ControlVector::global(surgery_r_max_); }

  // Tape-based forward; returns the [T x vocab] logits node. Activation rows
  // (post-block residual at the final position) are captured if requested.
  NodeRef forward_node(Tape& tape, const std::vector<int>& tokens,
                       const ControlVector& control,
                       std::vector<Tensor>* block_activations = nullptr);

  // Convenience no-grad forward returning only the final-position logits row.
  Tensor forward_last_logits(const std::vector<int>& tokens, const ControlVector& control);

  PredictResult predict_label(const TaskInstance& instance, const ControlVector& control,
                              bool mode_prefix = false);

  Tensor collect_activations(const std::vector<int>& tokens, const ControlVector& control,
                             int site);

  uint64_t param_checksum() const;

 private:
  void validate_control(const ControlVector& control) const;

  ModelConfig config_;
  ParameterStore params_;
  std::set<ModuleCoordinate> nlpn_coords_;
  int64_t surgery_r_max_ = 0;
};

std::vector<int> encode_instance(const TaskInstance& inst, bool mode_prefix = false);
int label_token(bool label);

struct EvalResult {
  double accuracy = 0.0;
  std::vector<uint8_t> correct;
};

EvalResult evaluate_accuracy(Model& model, const Dataset& ds, const ControlVector& control);

}  // namespace lpn
