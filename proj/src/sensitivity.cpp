#include "lpn/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lpn/experiment.hpp"

namespace lpn {

double significance_test(const std::vector<uint8_t>& correct_baseline,
                         const std::vector<uint8_t>& correct_intervened) {
  if (correct_baseline.empty())
    throw ArgumentError("significance_test: empty correctness vectors");
  if (correct_baseline.size() != correct_intervened.size())
    throw ArgumentError("significance_test: paired vectors differ in length");
  int64_t b = 0, c = 0;  // baseline-only correct / intervened-only correct
  for (size_t i = 0; i < correct_baseline.size(); ++i) {
    if (correct_baseline[i] && !correct_intervened[i]) ++b;
    if (!correct_baseline[i] && correct_intervened[i]) ++c;
  }
  int64_t n = b + c;
  if (n == 0) return 1.0;
  // two-sided exact binomial: P(X <= min) + P(X >= max) under X ~ Bin(n, 1/2)
  int64_t k = std::min(b, c);
  double tail = 0.0;
  double log_half = std::log(0.5);
  for (int64_t i = 0; i <= k; ++i) {
    double log_choose = std::lgamma(static_cast<double>(n) + 1.0) -
                        std::lgamma(static_cast<double>(i) + 1.0) -
                        std::lgamma(static_cast<double>(n - i) + 1.0);
    tail += std::exp(log_choose + static_cast<double>(n) * log_half);
  }
  double p = 2.0 * tail;
  if (b == c) p -= std::exp(std::lgamma(static_cast<double>(n) + 1.0) -
                            2.0 * std::lgamma(static_cast<double>(k) + 1.0) +
                            static_cast<double>(n) * log_half);  // central term once
  return std::min(1.0, p);
}

std::vector<bool> bh_fdr(const std::vector<double>& p_values, double q) {
  for (double p : p_values)
    if (p < 0.0 || p > 1.0 || !std::isfinite(p))
      throw ArgumentError("bh_fdr: p-values must lie in [0,1]");
  const size_t m = p_values.size();
  std::vector<size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return p_values[a] < p_values[b]; });
  size_t cutoff = 0;  // number of rejected hypotheses in sorted order
  for (size_t k = 1; k <= m; ++k)
    if (p_values[order[k - 1]] <=
        static_cast<double>(k) * q / static_cast<double>(m))
      cutoff = k;
  std::vector<bool> reject(m, false);
  for (size_t k = 0; k < cutoff; ++k) reject[order[k]] = true;
  return reject;
}

std::vector<SweepCell> single_module_sweep(Model& model,
                                           const std::vector<ModuleCoordinate>& coords,
                                           const std::vector<int64_t>& rank_grid,
                                           const std::map<Task, Dataset>& datasets) {
  if (!model.surgered()) throw StateError("single_module_sweep: model not surgered");
  for (const auto& c : coords)
    if (!model.nlpn_coords().count(c))
      throw ArgumentError("sweep coordinate " + c.key() + " is not a nested module");

  const int64_t full = model.r_max();
  std::map<Task, EvalResult> baseline;
  for (const auto& [task, ds] : datasets)
    baseline[task] = evaluate_accuracy(model, ds, ControlVector::global(full));

  std::vector<SweepCell> cells;
  for (const auto& coord : coords) {
    for (int64_t rank : rank_grid) {
      ControlVector cv = ControlVector::global(full);
      cv.overrides[coord] = rank;
      for (const auto& [task, ds] : datasets) {
        auto res = evaluate_accuracy(model, ds, cv);
        SweepCell cell;
        cell.coordinate = coord;
        cell.rank = rank;
        cell.task = task;
        cell.baseline_accuracy = baseline[task].accuracy;
        cell.intervened_accuracy = res.accuracy;
        cell.delta_accuracy = res.accuracy - baseline[task].accuracy;
        cell.p_value = significance_test(baseline[task].correct, res.correct);
        cells.push_back(cell);
      }
    }
  }
  return cells;
}

void apply_bh_mask(std::vector<SweepCell>& cells, double q) {
  std::vector<double> ps;
  ps.reserve(cells.size());
  for (const auto& c : cells) ps.push_back(c.p_value);
  auto mask = bh_fdr(ps, q);
  for (size_t i = 0; i < cells.size(); ++i) cells[i].significant = mask[i];
}

void fill_persistence(std::vector<SweepCell>& cells,
                      const std::vector<int64_t>& rank_grid) {
  std::vector<int64_t> grid = rank_grid;
  std::sort(grid.begin(), grid.end());
  auto grid_index = [&](int64_t r) {
    auto it = std::find(grid.begin(), grid.end(), r);
    if (it == grid.end())
      throw ArgumentError("persistence: rank " + std::to_string(r) + " not on the grid");
    return static_cast<size_t>(it - grid.begin());
  };
  // significance per (coordinate, task) keyed by grid position
  std::map<std::pair<std::string, Task>, std::vector<bool>> sig;
  for (const auto& c : cells) {
    auto& v = sig[{c.coordinate.key(), c.task}];
    if (v.empty()) v.assign(grid.size(), false);
    if (c.significant) v[grid_index(c.rank)] = true;
  }
  for (auto& c : cells) {
    if (!c.significant) {
      c.persistence = 0;
      continue;
    }
    const auto& v = sig[{c.coordinate.key(), c.task}];
    int run = 0;
    for (int64_t i = static_cast<int64_t>(grid_index(c.rank)); i >= 0 && v[i]; --i)
      ++run;
    c.persistence = run;
  }
}

std::string sensitivity_to_csv(const std::vector<SweepCell>& cells) {
  CsvBuilder csv({"block", "family", "rank", "task", "baseline_acc", "intervened_acc",
                  "delta", "p", "significant", "persistence"});
  for (const auto& c : cells)
    csv.row({std::to_string(c.coordinate.block), family_name(c.coordinate.family),
             std::to_string(c.rank), task_name(c.task), fmt_double(c.baseline_accuracy),
             fmt_double(c.intervened_accuracy), fmt_double(c.delta_accuracy),
             fmt_double(c.p_value), c.significant ? "1" : "0",
             std::to_string(c.persistence)});
  return csv.text();
}

}  // namespace lpn
