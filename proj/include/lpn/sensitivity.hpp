#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lpn/transformer.hpp"

namespace lpn {

struct SweepCell {
  ModuleCoordinate coordinate;
  int64_t rank = 0;
  Task task = Task::BalancedBrackets;
  double baseline_accuracy = 0.0;
  double intervened_accuracy = 0.0;
  double delta_accuracy = 0.0;  // intervened - baseline; negative = degradation
  double p_value = 1.0;
  bool significant = false;
  int persistence = 0;
};

// Exact two-sided McNemar test on paired 0/1 correctness vectors.
double significance_test(const std::vector<uint8_t>& correct_baseline,
                         const std::vector<uint8_t>& correct_intervened);

std::vector<bool> bh_fdr(const std::vector<double>& p_values, double q = 0.05);

// One coordinate reduced at a time, everything else held at full rank; delta
// and McNemar p against the shared full-privilege baseline per task.
std::vector<SweepCell> single_module_sweep(Model& model,
                                           const std::vector<ModuleCoordinate>& coords,
                                           const std::vector<int64_t>& rank_grid,
                                           const std::map<Task, Dataset>& datasets);

void apply_bh_mask(std::vector<SweepCell>& cells, double q = 0.05);

// Run-length of consecutive significant grid ranks ending at each cell's rank.
void fill_persistence(std::vector<SweepCell>& cells,
                      const std::vector<int64_t>& rank_grid);

std::string sensitivity_to_csv(const std::vector<SweepCell>& cells);

}  // namespace lpn
