#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "lpn/sensitivity.hpp"
#include "lpn/transformer.hpp"

namespace lpn {

struct SuppressionParams {
  double lambda_s = 2.0;
  double eps = 0.01;
  double gamma = 100.0;
  double min_suppression = 0.01;
  double max_collateral = 0.01;
  int top_coords = 20;
  int ranks_per_coord = 2;
  int beam_width = 8;
  int depth = 9;
  int refine_rounds = 2;
  std::vector<double> fractions = {0.95, 0.90, 0.80, 0.65, 0.50, 0.25, 0.15, 0.05};
};

struct SuppressionProblem {
  std::set<Task> suppress;
  std::set<Task> preserve;
  std::map<Task, double> baseline_accuracy;  // full-privilege reference per task
  SuppressionParams params;

  void validate() const;
};

// C = {(block, module) -> rank}; empty map is the do-nothing baseline.
using Configuration = std::map<ModuleCoordinate, int64_t>;

std::string configuration_key(const Configuration& c);

struct ScoredConfiguration {
  Configuration config;
  std::map<Task, double> accuracies;
  double score = 0.0;
};

double objective(const std::map<Task, double>& accuracies,
                 const SuppressionProblem& problem);

// Configuration -> per-task accuracy; the only path search takes to the model.
using Evaluator = std::function<std::map<Task, double>(const Configuration&)>;

Evaluator make_model_evaluator(Model& model, const std::map<Task, Dataset>& datasets);

struct CandidatePair {
  ModuleCoordinate coord;
  int64_t rank = 0;
};

struct Shortlist {
  std::vector<CandidatePair> pairs;
  bool empty_flagged = false;  // nothing cleared the filters; search stays at baseline
};

Shortlist shortlist(const std::vector<SweepCell>& cells,
                    const SuppressionProblem& problem);

struct SearchLog {
  std::vector<ScoredConfiguration> scored;  // in evaluation order
  int64_t evaluator_calls = 0;
};

ScoredConfiguration beam_search(const SuppressionProblem& problem,
                                const Shortlist& shortlist, const Evaluator& evaluate,
                                SearchLog* log = nullptr);

ScoredConfiguration refine(const ScoredConfiguration& best,
                           const SuppressionProblem& problem, const Evaluator& evaluate,
                           int64_t r_max, SearchLog* log = nullptr);

// rank candidate from a rank fraction: nearest integer, floored at 1
int64_t fraction_rank(double fraction, int64_t r_max);

std::string log_to_jsonl(const SearchLog& log);
std::string configuration_to_control_json(const Configuration& c, int64_t default_rank);

}  // namespace lpn
