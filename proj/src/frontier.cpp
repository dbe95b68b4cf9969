#include "lpn/frontier.hpp"

#include <algorithm>
#include <map>

#include "lpn/experiment.hpp"

namespace lpn {

DegradationSurface degradation_surface(Model& model, const Dataset& ds,
                                       const std::vector<int64_t>& grid) {
  if (ds.instances.empty()) throw ArgumentError("degradation_surface: empty dataset");
  if (grid.empty()) throw ArgumentError("degradation_surface: empty grid");

  std::map<int, std::vector<const TaskInstance*>> by_level;
  for (const auto& inst : ds.instances) by_level[inst.difficulty].push_back(&inst);

  DegradationSurface s;
  s.grid = grid;
  for (auto& [level, insts] : by_level) {
    s.difficulties.push_back(level);
    s.counts.push_back(static_cast<int64_t>(insts.size()));
    s.low_sample.push_back(static_cast<int64_t>(insts.size()) < kLowSampleCutoff);
  }
  // one pass per rank over the full dataset, then scatter into rows
  for (size_t r = 0; r < grid.size(); ++r) {
    std::map<int, std::pair<int64_t, int64_t>> hits;  // level -> (correct, total)
    ControlVector cv = ControlVector::global(grid[r]);
    for (const auto& inst : ds.instances) {
      bool ok = model.predict_label(inst, cv).label == inst.label;
      auto& [c, n] = hits[inst.difficulty];
      c += ok;
      n += 1;
    }
    size_t row = 0;
    for (auto& [level, cn] : hits) {
      if (r == 0) s.accuracy.emplace_back(grid.size(), 0.0);
      s.accuracy[row][r] =
          static_cast<double>(cn.first) / static_cast<double>(cn.second);
      ++row;
    }
  }
  return s;
}

std::vector<FrontierRecord> build_frontier(Model& model, const Dataset& validation,
                                           const Dataset& test,
                                           const std::vector<PolicyKind>& kinds,
                                           const std::vector<int64_t>& grid,
                                           const std::vector<double>& targets) {
  if (kinds.empty() || targets.empty())
    throw ArgumentError("build_frontier: kinds and targets must be non-empty");
  std::vector<FrontierRecord> records;
  for (double u0 : targets) {
    for (PolicyKind kind : kinds) {
      PolicyConfig p;
      p.kind = kind;
      p.rank_grid = grid;
      p.target_utility = u0;
      if (kind == PolicyKind::StaticLP) {
        auto cal = calibrate_static_lp(model, validation, grid, u0);
        p.calibrated_rank = cal.rank;
        p.infeasible = cal.infeasible;
      } else if (kind == PolicyKind::ProgressiveIncremental ||
                 kind == PolicyKind::ProgressiveJump) {
        auto cal = calibrate_threshold(model, validation, grid, u0, kind);
        p.uncertainty_threshold = cal.tau;
        p.infeasible = cal.infeasible;
      }
      auto rep = evaluate_policy(model, test, p);
      records.push_back({kind, u0, rep.utility, rep.avg_privilege, rep.avg_passes,
                         p.infeasible});
    }
  }
  return records;
}

namespace {

bool dominates(const FrontierRecord& a, const FrontierRecord& b) {
  bool geq = a.utility >= b.utility && a.avg_privilege <= b.avg_privilege;
  bool strict = a.utility > b.utility || a.avg_privilege < b.avg_privilege;
  return geq && strict;
}

}  // namespace

std::vector<FrontierRecord> pareto_filter(const std::vector<FrontierRecord>& records) {
  std::vector<FrontierRecord> kept;
  for (const auto& r : records) {
    bool dominated = false;
    for (const auto& other : records)
      if (dominates(other, r)) {
        dominated = true;
        break;
      }
    if (!dominated) kept.push_back(r);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const FrontierRecord& a, const FrontierRecord& b) {
                     return a.avg_privilege < b.avg_privilege;
                   });
  return kept;
}

std::vector<SavingsRow> relative_savings(const std::vector<FrontierRecord>& records,
                                         PolicyKind baseline) {
  const FrontierRecord* base = nullptr;
  for (const auto& r : records)
    if (r.kind == baseline) {
      base = &r;
      break;
    }
  if (!base) throw ArgumentError("relative_savings: baseline policy not in records");
  std::vector<SavingsRow> out;
  for (const auto& r : records) {
    SavingsRow row;
    row.kind = r.kind;
    row.target = r.target;
    if (base->utility == 0.0) {
      row.defined = false;
    } else {
      row.utility_retention_pct = 100.0 * r.utility / base->utility;
      row.privilege_reduction_pct = 100.0 * r.avg_privilege / base->avg_privilege;
    }
    out.push_back(row);
  }
  return out;
}

std::string frontier_to_csv(const std::vector<FrontierRecord>& records) {
  CsvBuilder csv(
      {"policy", "target", "utility", "avg_privilege", "avg_passes", "infeasible"});
  for (const auto& r : records)
    csv.row({policy_name(r.kind), fmt_double(r.target), fmt_double(r.utility),
             fmt_double(r.avg_privilege), fmt_double(r.avg_passes),
             r.infeasible ? "1" : "0"});
  return csv.text();
}

std::string surface_to_csv(const DegradationSurface& s) {
  CsvBuilder csv({"difficulty", "rank", "accuracy", "count", "low_sample"});
  for (size_t i = 0; i < s.difficulties.size(); ++i)
    for (size_t j = 0; j < s.grid.size(); ++j)
      csv.row({std::to_string(s.difficulties[i]), std::to_string(s.grid[j]),
               fmt_double(s.accuracy[i][j]), std::to_string(s.counts[i]),
               s.low_sample[i] ? "1" : "0"});
  return csv.text();
}

}  // namespace lpn
