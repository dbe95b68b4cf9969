#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lpn/transformer.hpp"

namespace lpn {

enum class VariantSampling { AllIntegers, Grid };

struct TrainConfig {
  int64_t steps = 1000;
  int64_t batch_size = 16;
  double lr = 1e-3;
  int64_t r_max = 32;
  VariantSampling variant_sampling = VariantSampling::AllIntegers;
  std::vector<int64_t> rank_grid;  // required in Grid mode; must contain r_max
  uint64_t seed = 0;
  int64_t eval_every = 100;
  std::vector<int64_t> eval_grid = {2, 4, 8, 16, 32};
  // Probe-audit training: half of each batch carries the MODE prefix and is
  // supervised to answer REFUSE instead of the label.
  bool mode_mixture = false;
  // Plain full-rank cross-entropy only; no variant pass, no log-variances.
  // Produces the "trained at max rank only" reference model.
  bool anchor_only = false;
  // Cosine decay from lr to lr_final over the run; constant lr when off.
  bool cosine_lr = false;
  double lr_final = 1e-4;
  // Capability scoping: when non-empty, the variant (low-rank) pass only sees
  // instances of these tasks, so capabilities outside the set are never
  // trained into the low-privilege subspace. Empty = all tasks.
  std::set<Task> variant_tasks;
  // Capacity-suppression regime for the probe audit: the variant pass is
  // supervised entirely to refuse (every instance MODE-prefixed), so low
  // privileges learn a constant refusal map instead of the task.
  bool variant_suppressed = false;

  void validate() const;
};

// s_g for every privilege 0..r_max lives in one model parameter ("log_vars",
// shape [1 x r_max+1]) so the shared optimizer updates it alongside the factors.
inline const char* kLogVarsName = "log_vars";

int64_t sample_variant(Rng& rng, const TrainConfig& cfg);

// The two-privilege uncertainty-weighted objective, scalar form.
double total_loss(double loss_anchor, double loss_variant, double s_anchor,
                  double s_variant);

struct StepMetrics {
  int64_t g = 0;
  double loss_anchor = 0.0;
  double loss_variant = 0.0;
  double loss_total = 0.0;
  double s_anchor = 0.0;
  double s_g = 0.0;
};

struct HistoryRow {
  int64_t step = 0;
  StepMetrics metrics;
  std::vector<double> val_accuracy;  // per eval_grid rank; empty off eval steps
};

struct TrainHistory {
  std::vector<int64_t> eval_grid;
  std::vector<HistoryRow> rows;
  std::string to_csv() const;
};

StepMetrics train_step(Model& model, const std::vector<TaskInstance>& batch,
                       Rng& rng, const TrainConfig& cfg);

TrainHistory train(Model& model, const SplitSet& splits, const TrainConfig& cfg);

// Mean last-position cross-entropy of the label token over a dataset.
double evaluate_mean_loss(Model& model, const Dataset& ds, const ControlVector& control);

// Accuracy with the MODE prefix, answer restricted to {TRUE, FALSE, REFUSE};
// a REFUSE argmax can never match the label, so trained refusal drives this down.
EvalResult evaluate_suppressed_accuracy(Model& model, const Dataset& ds,
                                        const ControlVector& control);

}  // namespace lpn
