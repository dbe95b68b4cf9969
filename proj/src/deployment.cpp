#include "lpn/deployment.hpp"

#include <algorithm>

#include "lpn/experiment.hpp"

namespace lpn {

std::string policy_name(PolicyKind k) {
  switch (k) {
    case PolicyKind::FullPrivilege: return "full_privilege";
    case PolicyKind::MinRank: return "min_rank";
    case PolicyKind::StaticLP: return "static_lp";
    case PolicyKind::ProgressiveIncremental: return "progressive_incremental";
    case PolicyKind::ProgressiveJump: return "progressive_jump";
  }
  throw ArgumentError("unknown policy kind");
}

PolicyKind policy_from_name(const std::string& name) {
  for (PolicyKind k :
       {PolicyKind::FullPrivilege, PolicyKind::MinRank, PolicyKind::StaticLP,
        PolicyKind::ProgressiveIncremental, PolicyKind::ProgressiveJump})
    if (policy_name(k) == name) return k;
  throw ArgumentError("unknown policy name: " + name);
}

void PolicyConfig::validate() const {
  if (rank_grid.empty()) throw ArgumentError("policy rank_grid must be non-empty");
  if (!std::is_sorted(rank_grid.begin(), rank_grid.end()) ||
      std::adjacent_find(rank_grid.begin(), rank_grid.end()) != rank_grid.end())
    throw ArgumentError("policy rank_grid must be strictly ascending");
  if (target_utility < 0.0 || target_utility > 1.0)
    throw ArgumentError("target_utility must lie in [0,1]");
  if (uncertainty_threshold && (*uncertainty_threshold < 0.0 || *uncertainty_threshold > 1.0))
    throw ArgumentError("uncertainty_threshold must lie in [0,1]");
}

double uncertainty(const std::vector<double>& answer_dist) {
  if (answer_dist.empty()) throw ArgumentError("uncertainty: empty distribution");
  double s = 0.0, mx = 0.0;
  for (double p : answer_dist) {
    if (p < 0.0) throw ArgumentError("uncertainty: negative probability");
    s += p;
    mx = std::max(mx, p);
  }
  if (std::abs(s - 1.0) > 1e-6)
    throw ArgumentError("uncertainty: distribution sums to " + fmt_double(s));
  return 1.0 - mx;
}

StaticLpCalibration calibrate_static_lp(const std::vector<int64_t>& grid,
                                        const std::vector<double>& accuracy, double u0) {
  if (grid.empty() || grid.size() != accuracy.size())
    throw ArgumentError("calibrate_static_lp: grid/accuracy size mismatch");
  StaticLpCalibration out;
  out.per_rank_accuracy = accuracy;
  for (size_t i = 0; i < grid.size(); ++i) {
    if (accuracy[i] >= u0) {
      out.rank = grid[i];
      return out;
    }
  }
  out.rank = grid.back();  // infeasible target: degrade to max rank, flag it
  out.infeasible = true;
  return out;
}

StaticLpCalibration calibrate_static_lp(Model& model, const Dataset& validation,
                                        const std::vector<int64_t>& grid, double u0) {
  if (validation.instances.empty())
    throw ArgumentError("calibrate_static_lp: empty validation set");
  std::vector<double> acc;
  acc.reserve(grid.size());
  for (int64_t g : grid)
    acc.push_back(evaluate_accuracy(model, validation, ControlVector::global(g)).accuracy);
  return calibrate_static_lp(grid, acc, u0);
}

RequestOutcome run_policy_with(const std::function<PredictResult(int64_t)>& predict,
                               bool label, const PolicyConfig& policy) {
  policy.validate();
  const int64_t lo = policy.rank_grid.front();
  const int64_t hi = policy.rank_grid.back();

  auto answer = [&](int64_t rank) { return std::make_pair(rank, predict(rank)); };

  int64_t rank = 0;
  PredictResult pr;
  int64_t passes = 1;
  switch (policy.kind) {
    case PolicyKind::FullPrivilege: std::tie(rank, pr) = answer(hi); break;
    case PolicyKind::MinRank: std::tie(rank, pr) = answer(lo); break;
    case PolicyKind::StaticLP:
      if (!policy.calibrated_rank)
        throw StateError("static_lp policy used before calibration");
      std::tie(rank, pr) = answer(*policy.calibrated_rank);
      break;
    case PolicyKind::ProgressiveIncremental: {
      if (!policy.uncertainty_threshold)
        throw StateError("progressive policy used before threshold calibration");
      size_t i = 0;
      std::tie(rank, pr) = answer(policy.rank_grid[i]);
      while (pr.uncertainty() > *policy.uncertainty_threshold &&
             i + 1 < policy.rank_grid.size()) {
        ++i;
        std::tie(rank, pr) = answer(policy.rank_grid[i]);
        ++passes;
      }
      break;
    }
    case PolicyKind::ProgressiveJump: {
      if (!policy.uncertainty_threshold)
        throw StateError("progressive policy used before threshold calibration");
      std::tie(rank, pr) = answer(lo);
      if (pr.uncertainty() > *policy.uncertainty_threshold) {
        std::tie(rank, pr) = answer(hi);
        passes = 2;
      }
      break;
    }
  }

  RequestOutcome out;
  out.prediction = pr.label;
  out.correct = pr.label == label;
  out.privilege_used = rank;
  out.passes = passes;
  return out;
}

RequestOutcome run_policy(Model& model, const TaskInstance& instance,
                          const PolicyConfig& policy) {
  return run_policy_with(
      [&](int64_t rank) {
        return model.predict_label(instance, ControlVector::global(rank));
      },
      instance.label, policy);
}

PolicyReport evaluate_policy(Model& model, const Dataset& ds,
                             const PolicyConfig& policy) {
  if (ds.instances.empty()) throw ArgumentError("evaluate_policy: empty dataset");
  PolicyReport rep;
  rep.n = static_cast<int64_t>(ds.instances.size());
  rep.outcomes.reserve(ds.instances.size());
  double u = 0.0, p = 0.0, q = 0.0;
  for (const auto& inst : ds.instances) {
    RequestOutcome o = run_policy(model, inst, policy);
    u += o.correct;
    p += static_cast<double>(o.privilege_used);
    q += static_cast<double>(o.passes);
    rep.outcomes.push_back(o);
  }
  rep.utility = u / static_cast<double>(rep.n);
  rep.avg_privilege = p / static_cast<double>(rep.n);
  rep.avg_passes = q / static_cast<double>(rep.n);
  return rep;
}

ThresholdCalibration calibrate_threshold(Model& model, const Dataset& validation,
                                         const std::vector<int64_t>& grid, double u0,
                                         PolicyKind kind) {
  if (validation.instances.empty())
    throw ArgumentError("calibrate_threshold: empty validation set");
  if (kind != PolicyKind::ProgressiveIncremental && kind != PolicyKind::ProgressiveJump)
    throw ArgumentError("calibrate_threshold: not a progressive policy");
  ThresholdCalibration out;
  // larger tau escalates less, so the largest feasible tau is least-privilege
  double best_tau = -1.0;
  for (double tau : kThresholdSweep) {
    PolicyConfig sim;
    sim.kind = kind;
    sim.rank_grid = grid;
    sim.uncertainty_threshold = tau;
    double util = evaluate_policy(model, validation, sim).utility;
    out.per_tau_utility.push_back(util);
    if (util >= u0) best_tau = std::max(best_tau, tau);
  }
  if (best_tau < 0.0) {
    out.tau = kThresholdSweep.front();  // most escalation available
    out.infeasible = true;
  } else {
    out.tau = best_tau;
  }
  return out;
}

std::string outcomes_to_csv(const Dataset& ds, const PolicyConfig& policy,
                            const PolicyReport& report) {
  CsvBuilder csv({"instance_id", "task", "difficulty", "policy", "target", "prediction",
                  "correct", "privilege_used", "passes"});
  for (size_t i = 0; i < report.outcomes.size(); ++i) {
    const auto& inst = ds.instances[i];
    const auto& o = report.outcomes[i];
    csv.row({std::to_string(i), task_name(inst.task), std::to_string(inst.difficulty),
             policy_name(policy.kind), fmt_double(policy.target_utility),
             o.prediction ? "1" : "0", o.correct ? "1" : "0",
             std::to_string(o.privilege_used), std::to_string(o.passes)});
  }
  return csv.text();
}

}  // namespace lpn
