#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lpn/trainer.hpp"
#include "lpn/transformer.hpp"

namespace lpn {

struct ProbeDataset {
  Tensor features;              // n x d activation rows
  std::vector<uint8_t> labels;  // ground-truth task labels
  int64_t rank = 0;             // privilege at collection time
  bool suppressed_mode = false;
};

struct LinearProbe {
  Tensor w;  // 1 x d
  double b = 0.0;
  Tensor feat_mean;  // standardization fitted on the training activations
  Tensor feat_std;
  bool degenerate = false;  // single-class training data
  uint8_t constant_class = 0;
  int iterations = 0;
};

// Logistic-loss linear classifier, full-batch gradient descent to convergence
// (mean-loss change < 1e-6) or 5000 iterations.
LinearProbe fit_linear_probe(const ProbeDataset& train, uint64_t seed = 0);

bool probe_predict(const LinearProbe& probe, const double* features, int64_t d);
double probe_accuracy(const LinearProbe& probe, const ProbeDataset& ds);

ProbeDataset collect_probe_dataset(Model& model, const Dataset& ds, int64_t rank,
                                   bool suppressed_mode, int site);

// Thin wrapper over the multi-privilege loop with the 50/50 MODE-refusal
// mixture switched on.
TrainHistory train_suppression_mode(Model& model, const SplitSet& splits,
                                    TrainConfig cfg);

struct CapacityRow {
  int64_t rank = 0;
  double baseline_accuracy = 0.0;
  double suppressed_behavioral_accuracy = 0.0;
  double probe_accuracy = 0.0;
};

// Per grid rank: normal-mode accuracy, MODE-prefixed behavioral accuracy, and
// held-out accuracy of a probe freshly fit on suppressed-mode activations.
std::vector<CapacityRow> capacity_curve(Model& model, const Dataset& probe_train,
                                        const Dataset& eval_set,
                                        const std::vector<int64_t>& grid,
                                        uint64_t seed);

std::string capacity_to_csv(const std::vector<CapacityRow>& rows, uint64_t seed);

}  // namespace lpn
