#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lpn/transformer.hpp"

namespace lpn {

enum class PolicyKind {
  FullPrivilege,
  MinRank,
  StaticLP,
  ProgressiveIncremental,
  ProgressiveJump
};
std::string policy_name(PolicyKind k);
PolicyKind policy_from_name(const std::string& name);

inline const std::vector<double> kThresholdSweep = {0.02, 0.05, 0.1, 0.15,
                                                    0.2,  0.3,  0.4};

struct PolicyConfig {
  PolicyKind kind = PolicyKind::FullPrivilege;
  std::vector<int64_t> rank_grid;  // ascending
  double target_utility = 0.0;     // u0
  // filled by calibration
  std::optional<double> uncertainty_threshold;  // tau, progressive kinds
  std::optional<int64_t> calibrated_rank;       // g*, StaticLP
  bool infeasible = false;

  void validate() const;
  bool needs_calibration() const {
    return kind == PolicyKind::StaticLP || kind == PolicyKind::ProgressiveIncremental ||
           kind == PolicyKind::ProgressiveJump;
  }
};

struct RequestOutcome {
  bool prediction = false;
  bool correct = false;
  int64_t privilege_used = 0;  // rank of the answering pass only
  int64_t passes = 1;
};

struct PolicyReport {
  double utility = 0.0;
  double avg_privilege = 0.0;
  double avg_passes = 0.0;
  int64_t n = 0;
  std::vector<RequestOutcome> outcomes;
};

double uncertainty(const std::vector<double>& answer_dist);

struct StaticLpCalibration {
  int64_t rank = 0;
  bool infeasible = false;
  std::vector<double> per_rank_accuracy;  // parallel to the grid
};

StaticLpCalibration calibrate_static_lp(Model& model, const Dataset& validation,
                                        const std::vector<int64_t>& grid, double u0);
// exhaustive-scan form used when per-rank accuracies are already known
StaticLpCalibration calibrate_static_lp(const std::vector<int64_t>& grid,
                                        const std::vector<double>& accuracy, double u0);

struct ThresholdCalibration {
  double tau = 0.0;
  bool infeasible = false;
  std::vector<double> per_tau_utility;  // parallel to kThresholdSweep
};

ThresholdCalibration calibrate_threshold(Model& model, const Dataset& validation,
                                         const std::vector<int64_t>& grid, double u0,
                                         PolicyKind kind);

RequestOutcome run_policy(Model& model, const TaskInstance& instance,
                          const PolicyConfig& policy);

// Core escalation loop against an arbitrary rank->prediction function; the
// model-backed overload routes through this, and tests drive it directly.
RequestOutcome run_policy_with(const std::function<PredictResult(int64_t)>& predict,
                               bool label, const PolicyConfig& policy);

PolicyReport evaluate_policy(Model& model, const Dataset& ds, const PolicyConfig& policy);

std::string outcomes_to_csv(const Dataset& ds, const PolicyConfig& policy,
                            const PolicyReport& report);

}  // namespace lpn
