#include "lpn/suppressor.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace lpn {

void SuppressionProblem::validate() const {
  if (suppress.empty() || preserve.empty())
    throw ArgumentError("suppression problem needs non-empty suppress and preserve sets");
  for (Task t : suppress)
    if (preserve.count(t))
      throw ArgumentError("task " + task_name(t) + " is both suppressed and preserved");
  for (Task t : suppress)
    if (!baseline_accuracy.count(t))
      throw ArgumentError("missing baseline accuracy for " + task_name(t));
  for (Task t : preserve)
    if (!baseline_accuracy.count(t))
      throw ArgumentError("missing baseline accuracy for " + task_name(t));
  if (params.lambda_s <= 0 || params.gamma <= 0 || params.eps <= 0 ||
      params.beam_width <= 0 || params.depth <= 0)
    throw ArgumentError("suppression params must be positive");
}

std::string configuration_key(const Configuration& c) {
  std::string key;
  for (const auto& [coord, rank] : c) {
    if (!key.empty()) key += ';';
    key += coord.key() + ":" + std::to_string(rank);
  }
  return key;
}

double objective(const std::map<Task, double>& accuracies,
                 const SuppressionProblem& problem) {
  auto acc = [&](Task t) {
    auto it = accuracies.find(t);
    if (it == accuracies.end())
      throw ArgumentError("objective: missing accuracy for " + task_name(t));
    return it->second;
  };
  double a_preserve = 0.0, a_suppress = 0.0;
  for (Task t : problem.preserve) a_preserve += acc(t);
  for (Task t : problem.suppress) a_suppress += acc(t);
  a_preserve /= static_cast<double>(problem.preserve.size());
  a_suppress /= static_cast<double>(problem.suppress.size());

  double penalty = 0.0;
  for (Task t : problem.preserve) {
    double drop = problem.baseline_accuracy.at(t) - acc(t);
    if (drop > problem.params.eps)
      penalty += problem.params.gamma * (drop - problem.params.eps);
  }
  return a_preserve - problem.params.lambda_s * a_suppress - penalty;
}

Evaluator make_model_evaluator(Model& model, const std::map<Task, Dataset>& datasets) {
  int64_t full = model.r_max();
  return [&model, datasets, full](const Configuration& c) {
    ControlVector cv = ControlVector::global(full);
    for (const auto& [coord, rank] : c) cv.overrides[coord] = rank;
    std::map<Task, double> out;
    for (const auto& [task, ds] : datasets)
      out[task] = evaluate_accuracy(model, ds, cv).accuracy;
    return out;
  };
}

Shortlist shortlist(const std::vector<SweepCell>& cells,
                    const SuppressionProblem& problem) {
  // mean drops per (coordinate, rank) across the two task groups
  struct Effect {
    double suppress_drop = 0.0;
    double preserve_drop = 0.0;
    int n_suppress = 0;
    int n_preserve = 0;
  };
  std::map<std::pair<std::string, int64_t>, Effect> effects;
  std::map<std::string, ModuleCoordinate> coord_of;
  for (const auto& cell : cells) {
    auto& e = effects[{cell.coordinate.key(), cell.rank}];
    coord_of[cell.coordinate.key()] = cell.coordinate;
    double drop = -cell.delta_accuracy;
    if (problem.suppress.count(cell.task)) {
      e.suppress_drop += drop;
      e.n_suppress++;
    } else if (problem.preserve.count(cell.task)) {
      e.preserve_drop += drop;
      e.n_preserve++;
    }
  }

  // qualifying (coordinate, rank) pairs grouped per coordinate
  std::map<std::string, std::vector<std::pair<double, int64_t>>> qualifying;
  for (auto& [key, e] : effects) {
    if (e.n_suppress == 0 || e.n_preserve == 0) continue;
    double ds = e.suppress_drop / e.n_suppress;
    double dp = e.preserve_drop / e.n_preserve;
    if (ds >= problem.params.min_suppression && dp <= problem.params.max_collateral)
      qualifying[key.first].push_back({ds, key.second});
  }

  // coordinates ranked by their strongest suppression effect
  std::vector<std::pair<double, std::string>> ranked;
  for (auto& [coord, ranks] : qualifying) {
    std::sort(ranks.begin(), ranks.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    ranked.push_back({ranks.front().first, coord});
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });

  Shortlist out;
  int kept = 0;
  for (const auto& [effect, key] : ranked) {
    if (kept >= problem.params.top_coords) break;
    const auto& ranks = qualifying[key];
    for (int i = 0; i < std::min<int>(problem.params.ranks_per_coord,
                                      static_cast<int>(ranks.size()));
         ++i)
      out.pairs.push_back({coord_of[key], ranks[i].second});
    ++kept;
  }
  out.empty_flagged = out.pairs.empty();
  return out;
}

namespace {

class Memo {
 public:
  Memo(const SuppressionProblem& problem, const Evaluator& evaluate, SearchLog* log)
      : problem_(problem), evaluate_(evaluate), log_(log) {}

  const ScoredConfiguration& score(const Configuration& c) {
    std::string key = configuration_key(c);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    ScoredConfiguration sc;
    sc.config = c;
    sc.accuracies = evaluate_(c);
    sc.score = objective(sc.accuracies, problem_);
    if (log_) {
      log_->scored.push_back(sc);
      log_->evaluator_calls++;
    }
    return cache_.emplace(key, std::move(sc)).first->second;
  }

 private:
  const SuppressionProblem& problem_;
  const Evaluator& evaluate_;
  SearchLog* log_;
  std::map<std::string, ScoredConfiguration> cache_;
};

// deterministic preference: higher score, then fewer interventions, then
// lexicographic configuration key
bool better(const ScoredConfiguration& a, const ScoredConfiguration& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.config.size() != b.config.size()) return a.config.size() < b.config.size();
  return configuration_key(a.config) < configuration_key(b.config);
}

}  // namespace

ScoredConfiguration beam_search(const SuppressionProblem& problem,
                                const Shortlist& shortlist, const Evaluator& evaluate,
                                SearchLog* log) {
  problem.validate();
  Memo memo(problem, evaluate, log);

  ScoredConfiguration best = memo.score({});
  std::vector<ScoredConfiguration> beam = {best};
  for (int depth = 0; depth < problem.params.depth; ++depth) {
    std::vector<ScoredConfiguration> expanded;
    std::set<std::string> seen;
    for (const auto& state : beam) {
      for (const auto& cand : shortlist.pairs) {
        if (state.config.count(cand.coord)) continue;  // one rank per coordinate
        Configuration next = state.config;
        next[cand.coord] = cand.rank;
        std::string key = configuration_key(next);
        if (!seen.insert(key).second) continue;
        expanded.push_back(memo.score(next));
      }
    }
    if (expanded.empty()) break;
    std::sort(expanded.begin(), expanded.end(), better);
    if (static_cast<int>(expanded.size()) > problem.params.beam_width)
      expanded.resize(problem.params.beam_width);
    beam = std::move(expanded);
    if (better(beam.front(), best)) best = beam.front();
  }
  return best;
}

int64_t fraction_rank(double fraction, int64_t r_max) {
  int64_t r = static_cast<int64_t>(std::llround(fraction * static_cast<double>(r_max)));
  return std::clamp<int64_t>(r, 1, r_max);
}

ScoredConfiguration refine(const ScoredConfiguration& best,
                           const SuppressionProblem& problem, const Evaluator& evaluate,
                           int64_t r_max, SearchLog* log) {
  problem.validate();
  if (best.config.empty()) return best;
  Memo memo(problem, evaluate, log);

  // candidate ranks: the fraction set plus midpoints of neighbouring fractions
  std::vector<double> fracs = problem.params.fractions;
  std::sort(fracs.begin(), fracs.end(), std::greater<>());
  std::set<int64_t> candidates;
  for (size_t i = 0; i < fracs.size(); ++i) {
    candidates.insert(fraction_rank(fracs[i], r_max));
    if (i + 1 < fracs.size())
      candidates.insert(fraction_rank(0.5 * (fracs[i] + fracs[i + 1]), r_max));
  }

  ScoredConfiguration current = memo.score(best.config);
  if (current.score < best.score) current = best;  // trust the caller's score
  for (int round = 0; round < problem.params.refine_rounds; ++round) {
    for (const auto& [coord, _] : best.config) {
      ScoredConfiguration local = current;
      for (int64_t r : candidates) {
        Configuration trial = current.config;
        trial[coord] = r;
        const auto& sc = memo.score(trial);
        if (better(sc, local)) local = sc;
      }
      current = local;  // keep-best per coordinate: never decreases
    }
  }
  return current;
}

std::string log_to_jsonl(const SearchLog& log) {
  std::string out;
  for (const auto& sc : log.scored) {
    nlohmann::json j;
    j["config"] = nlohmann::json::object();
    for (const auto& [coord, rank] : sc.config) j["config"][coord.key()] = rank;
    j["accuracies"] = nlohmann::json::object();
    for (const auto& [task, acc] : sc.accuracies) j["accuracies"][task_name(task)] = acc;
    j["score"] = sc.score;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string configuration_to_control_json(const Configuration& c, int64_t default_rank) {
  nlohmann::json j;
  j["default_rank"] = default_rank;
  j["overrides"] = nlohmann::json::object();
  for (const auto& [coord, rank] : c) j["overrides"][coord.key()] = rank;
  return j.dump(2) + "\n";
}

}  // namespace lpn
