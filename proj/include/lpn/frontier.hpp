#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lpn/deployment.hpp"

namespace lpn {

inline const std::vector<double> kDefaultTargets = {0.80, 0.90, 0.95};
constexpr int64_t kLowSampleCutoff = 20;

struct FrontierRecord {
  PolicyKind kind = PolicyKind::FullPrivilege;
  double target = 0.0;
  double utility = 0.0;
  double avg_privilege = 0.0;
  double avg_passes = 0.0;
  bool infeasible = false;
};

struct DegradationSurface {
  std::vector<int> difficulties;                // row labels, ascending
  std::vector<int64_t> grid;                    // column labels, ascending
  std::vector<std::vector<double>> accuracy;    // [difficulty][rank]
  std::vector<int64_t> counts;                  // instances per difficulty row
  std::vector<bool> low_sample;                 // counts < kLowSampleCutoff
};

DegradationSurface degradation_surface(Model& model, const Dataset& ds,
                                       const std::vector<int64_t>& grid);

std::vector<FrontierRecord> build_frontier(Model& model, const Dataset& validation,
                                           const Dataset& test,
                                           const std::vector<PolicyKind>& kinds,
                                           const std::vector<int64_t>& grid,
                                           const std::vector<double>& targets =
                                               kDefaultTargets);

// Dominance filter over (utility up, privilege down); survivors sorted by
// ascending privilege for a stable frontier readout.
std::vector<FrontierRecord> pareto_filter(const std::vector<FrontierRecord>& records);

struct SavingsRow {
  PolicyKind kind = PolicyKind::FullPrivilege;
  double target = 0.0;
  double utility_retention_pct = 0.0;
  double privilege_reduction_pct = 0.0;
  bool defined = true;  // false when the baseline utility is zero
};

std::vector<SavingsRow> relative_savings(const std::vector<FrontierRecord>& records,
                                         PolicyKind baseline = PolicyKind::FullPrivilege);

std::string frontier_to_csv(const std::vector<FrontierRecord>& records);
std::string surface_to_csv(const DegradationSurface& s);

}  // namespace lpn
