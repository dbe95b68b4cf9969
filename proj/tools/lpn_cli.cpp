// lpn: operator CLI tying the library modules into reproducible experiment
// pipelines. One JSON config drives every subcommand; each run echoes the
// resolved config next to its artifacts so outputs are always traceable.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "lpn/checkpoint.hpp"
#include "lpn/deployment.hpp"
#include "lpn/experiment.hpp"
#include "lpn/frontier.hpp"
#include "lpn/nested_linear.hpp"
#include "lpn/probe.hpp"
#include "lpn/sensitivity.hpp"
#include "lpn/suppressor.hpp"
#include "lpn/taskgen.hpp"
#include "lpn/trainer.hpp"
#include "lpn/transformer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace lpn;

// ---------------------------------------------------------------------------
// configuration

struct ExperimentConfig {
  ModelConfig model;
  std::vector<Task> tasks = kAllTasks;
  std::vector<int> levels = {1, 2, 3, 4, 5};
  // instances per difficulty level in each split
  int n_train = 512;
  int n_val = 128;
  int n_test = 128;
  TrainConfig train;
  std::vector<int64_t> grid = {2, 4, 8, 16, 32};
  std::vector<double> targets = kDefaultTargets;
  std::vector<PolicyKind> policies = {
      PolicyKind::FullPrivilege, PolicyKind::MinRank, PolicyKind::StaticLP,
      PolicyKind::ProgressiveIncremental, PolicyKind::ProgressiveJump};
  std::set<Task> suppress_tasks = {Task::ContainsSubstring};
  std::set<Task> preserve_tasks = {Task::BalancedBrackets, Task::LengthComparison};
  int64_t svd_compare_steps = 0;  // 0 = reuse train.steps
  uint64_t seed = 0;
  std::string out_dir = "out";
  std::string checkpoint;  // empty = <out_dir>/checkpoint.bin
};

void reject_unknown_keys(const json& j, const std::vector<std::string>& allowed,
                         const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ArgumentError("unknown config key \"" + key + "\" in " + where);
  }
}

ModelConfig parse_model(const json& j) {
  reject_unknown_keys(j,
                      {"vocab_size", "d_model", "n_layers", "n_heads", "d_mlp",
                       "max_seq_len", "r_max", "nlpn_targets"},
                      "model");
  ModelConfig cfg;
  if (j.contains("vocab_size")) cfg.vocab_size = j["vocab_size"].get<int64_t>();
  if (j.contains("d_model")) cfg.d_model = j["d_model"].get<int64_t>();
  if (j.contains("n_layers")) cfg.n_layers = j["n_layers"].get<int64_t>();
  if (j.contains("n_heads")) cfg.n_heads = j["n_heads"].get<int64_t>();
  if (j.contains("d_mlp")) cfg.d_mlp = j["d_mlp"].get<int64_t>();
  if (j.contains("max_seq_len")) cfg.max_seq_len = j["max_seq_len"].get<int64_t>();
  if (j.contains("r_max")) cfg.nlpn_r_max = j["r_max"].get<int64_t>();
  if (j.contains("nlpn_targets")) {
    cfg.nlpn_targets.clear();
    for (const auto& name : j["nlpn_targets"])
      cfg.nlpn_targets.push_back(family_from_name(name.get<std::string>()));
  }
  return cfg;
}

TrainConfig parse_train(const json& j) {
  reject_unknown_keys(j,
                      {"steps", "batch_size", "lr", "variant_sampling", "eval_every",
                       "mode_mixture", "anchor_only", "cosine_lr", "lr_final",
                       "variant_tasks", "variant_suppressed"},
                      "train");
  TrainConfig cfg;
  if (j.contains("steps")) cfg.steps = j["steps"].get<int64_t>();
  if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int64_t>();
  if (j.contains("lr")) cfg.lr = j["lr"].get<double>();
  if (j.contains("variant_sampling")) {
    std::string mode = j["variant_sampling"].get<std::string>();
    if (mode == "grid")
      cfg.variant_sampling = VariantSampling::Grid;
    else if (mode == "all_integers")
      cfg.variant_sampling = VariantSampling::AllIntegers;
    else
      throw ArgumentError("variant_sampling must be \"grid\" or \"all_integers\", got \"" +
                          mode + "\"");
  }
  if (j.contains("eval_every")) cfg.eval_every = j["eval_every"].get<int64_t>();
  if (j.contains("mode_mixture")) cfg.mode_mixture = j["mode_mixture"].get<bool>();
  if (j.contains("anchor_only")) cfg.anchor_only = j["anchor_only"].get<bool>();
  if (j.contains("cosine_lr")) cfg.cosine_lr = j["cosine_lr"].get<bool>();
  if (j.contains("lr_final")) cfg.lr_final = j["lr_final"].get<double>();
  if (j.contains("variant_suppressed"))
    cfg.variant_suppressed = j["variant_suppressed"].get<bool>();
  if (j.contains("variant_tasks"))
    for (const auto& name : j["variant_tasks"])
      cfg.variant_tasks.insert(task_from_name(name.get<std::string>()));
  return cfg;
}

ExperimentConfig parse_config(const json& j) {
  reject_unknown_keys(j,
                      {"model", "tasks", "levels", "n_train", "n_val", "n_test", "train",
                       "grid", "targets", "policies", "suppression", "svd_compare_steps",
                       "seed", "out_dir", "checkpoint"},
                      "config");
  ExperimentConfig cfg;
  if (j.contains("model")) cfg.model = parse_model(j["model"]);
  if (j.contains("tasks")) {
    cfg.tasks.clear();
    for (const auto& name : j["tasks"])
      cfg.tasks.push_back(task_from_name(name.get<std::string>()));
    if (cfg.tasks.empty()) throw ArgumentError("tasks must name at least one task");
  }
  if (j.contains("levels")) {
    cfg.levels = j["levels"].get<std::vector<int>>();
    if (cfg.levels.empty()) throw ArgumentError("levels must be non-empty");
  }
  if (j.contains("n_train")) cfg.n_train = j["n_train"].get<int>();
  if (j.contains("n_val")) cfg.n_val = j["n_val"].get<int>();
  if (j.contains("n_test")) cfg.n_test = j["n_test"].get<int>();
  if (cfg.n_train <= 0 || cfg.n_val <= 0 || cfg.n_test <= 0)
    throw ArgumentError("split sizes must be positive");
  if (j.contains("train")) cfg.train = parse_train(j["train"]);
  if (j.contains("grid")) cfg.grid = j["grid"].get<std::vector<int64_t>>();
  if (cfg.grid.empty() || !std::is_sorted(cfg.grid.begin(), cfg.grid.end()))
    throw ArgumentError("grid must be a non-empty ascending rank list");
  if (j.contains("targets")) cfg.targets = j["targets"].get<std::vector<double>>();
  if (j.contains("policies")) {
    cfg.policies.clear();
    for (const auto& name : j["policies"])
      cfg.policies.push_back(policy_from_name(name.get<std::string>()));
  }
  if (j.contains("suppression")) {
    const json& s = j["suppression"];
    reject_unknown_keys(s, {"suppress", "preserve"}, "suppression");
    cfg.suppress_tasks.clear();
    cfg.preserve_tasks.clear();
    for (const auto& name : s.at("suppress"))
      cfg.suppress_tasks.insert(task_from_name(name.get<std::string>()));
    for (const auto& name : s.at("preserve"))
      cfg.preserve_tasks.insert(task_from_name(name.get<std::string>()));
  }
  if (j.contains("svd_compare_steps"))
    cfg.svd_compare_steps = j["svd_compare_steps"].get<int64_t>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
  if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();
  if (j.contains("checkpoint")) cfg.checkpoint = j["checkpoint"].get<std::string>();

  cfg.model.validate();
  cfg.train.r_max = cfg.model.nlpn_r_max;
  cfg.train.rank_grid = cfg.grid;
  cfg.train.eval_grid = cfg.grid;
  cfg.train.seed = cfg.seed;
  cfg.train.validate();
  if (cfg.grid.back() > cfg.model.nlpn_r_max)
    throw ArgumentError("grid exceeds the model's r_max");
  return cfg;
}

json resolved_json(const ExperimentConfig& cfg) {
  json j;
  j["model"]["vocab_size"] = cfg.model.vocab_size;
  j["model"]["d_model"] = cfg.model.d_model;
  j["model"]["n_layers"] = cfg.model.n_layers;
  j["model"]["n_heads"] = cfg.model.n_heads;
  j["model"]["d_mlp"] = cfg.model.d_mlp;
  j["model"]["max_seq_len"] = cfg.model.max_seq_len;
  j["model"]["r_max"] = cfg.model.nlpn_r_max;
  j["model"]["nlpn_targets"] = json::array();
  for (Family f : cfg.model.nlpn_targets)
    j["model"]["nlpn_targets"].push_back(family_name(f));
  j["tasks"] = json::array();
  for (Task t : cfg.tasks) j["tasks"].push_back(task_name(t));
  j["levels"] = cfg.levels;
  j["n_train"] = cfg.n_train;
  j["n_val"] = cfg.n_val;
  j["n_test"] = cfg.n_test;
  j["train"]["steps"] = cfg.train.steps;
  j["train"]["batch_size"] = cfg.train.batch_size;
  j["train"]["lr"] = cfg.train.lr;
  j["train"]["variant_sampling"] =
      cfg.train.variant_sampling == VariantSampling::Grid ? "grid" : "all_integers";
  j["train"]["eval_every"] = cfg.train.eval_every;
  j["train"]["mode_mixture"] = cfg.train.mode_mixture;
  j["train"]["anchor_only"] = cfg.train.anchor_only;
  j["train"]["cosine_lr"] = cfg.train.cosine_lr;
  j["train"]["lr_final"] = cfg.train.lr_final;
  j["train"]["variant_suppressed"] = cfg.train.variant_suppressed;
  j["train"]["variant_tasks"] = json::array();
  for (Task t : cfg.train.variant_tasks)
    j["train"]["variant_tasks"].push_back(task_name(t));
  j["grid"] = cfg.grid;
  j["targets"] = cfg.targets;
  j["policies"] = json::array();
  for (PolicyKind k : cfg.policies) j["policies"].push_back(policy_name(k));
  j["suppression"]["suppress"] = json::array();
  for (Task t : cfg.suppress_tasks) j["suppression"]["suppress"].push_back(task_name(t));
  j["suppression"]["preserve"] = json::array();
  for (Task t : cfg.preserve_tasks) j["suppression"]["preserve"].push_back(task_name(t));
  j["svd_compare_steps"] = cfg.svd_compare_steps;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  j["checkpoint"] = cfg.checkpoint;
  return j;
}

// ---------------------------------------------------------------------------
// shared plumbing

std::string out_path(const ExperimentConfig& cfg, const std::string& name) {
  return (fs::path(cfg.out_dir) / name).string();
}

void ensure_out_dir(const ExperimentConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + cfg.out_dir);
}

void echo_config(const ExperimentConfig& cfg, const std::string& command) {
  atomic_write_text(out_path(cfg, command + ".config.json"),
                    resolved_json(cfg).dump(2) + "\n");
}

std::string data_file(const ExperimentConfig& cfg, Task t, Split s) {
  return out_path(cfg, "data/" + task_name(t) + "_" + split_name(s) + ".jsonl");
}

uint64_t task_seed(const ExperimentConfig& cfg, Task t) {
  return Rng(cfg.seed).fork(0xda7a + static_cast<uint64_t>(t)).next_u64();
}

Dataset load_split(const ExperimentConfig& cfg, Task t, Split s) {
  std::string path = data_file(cfg, t, s);
  if (!fs::exists(path))
    throw IoError("dataset file " + path + " not found; run gen-data first");
  return read_jsonl(path);
}

// All configured tasks merged into one dataset (order: config task order).
Dataset load_merged(const ExperimentConfig& cfg, Split s) {
  Dataset merged;
  merged.split = s;
  merged.seed = cfg.seed;
  for (Task t : cfg.tasks) {
    Dataset ds = load_split(cfg, t, s);
    merged.instances.insert(merged.instances.end(), ds.instances.begin(),
                            ds.instances.end());
  }
  return merged;
}

std::string checkpoint_path(const ExperimentConfig& cfg) {
  return cfg.checkpoint.empty() ? out_path(cfg, "checkpoint.bin") : cfg.checkpoint;
}

// A loaded checkpoint must describe the same architecture the config asks for;
// anything else would silently mix incompatible artifacts.
Model load_compatible_checkpoint(const ExperimentConfig& cfg) {
  Model model = load_checkpoint(checkpoint_path(cfg));
  ModelConfig expected = cfg.model;
  if (expected.vocab_size == 0) expected.vocab_size = Tokenizer::get().vocab_size();
  if (model_config_to_json(model.config()) != model_config_to_json(expected))
    throw CheckpointError("checkpoint " + checkpoint_path(cfg) +
                          " was built with a different model config");
  if (!model.surgered())
    throw CheckpointError("checkpoint " + checkpoint_path(cfg) +
                          " holds a dense model; experiments need a surgered one");
  return model;
}

// ---------------------------------------------------------------------------
// subcommands

int cmd_gen_data(const ExperimentConfig& cfg) {
  ensure_out_dir(cfg);
  std::error_code ec;
  fs::create_directories(fs::path(cfg.out_dir) / "data", ec);
  if (ec) throw IoError("cannot create data directory under " + cfg.out_dir);

  json manifest;
  manifest["seed"] = cfg.seed;
  manifest["files"] = json::array();
  for (Task t : cfg.tasks) {
    uint64_t seed = task_seed(cfg, t);
    SplitSet splits =
        make_splits(t, cfg.levels, cfg.n_train, cfg.n_val, cfg.n_test, seed);
    for (const Dataset* ds : {&splits.train, &splits.validation, &splits.test}) {
      std::string path = data_file(cfg, t, ds->split);
      write_jsonl(*ds, path);
      json entry;
      entry["task"] = task_name(t);
      entry["split"] = split_name(ds->split);
      entry["path"] = path;
      entry["count"] = ds->instances.size();
      entry["seed"] = seed;
      manifest["files"].push_back(entry);
    }
  }
  atomic_write_text(out_path(cfg, "data/manifest.json"), manifest.dump(2) + "\n");
  echo_config(cfg, "gen-data");
  std::cout << "gen-data: wrote " << manifest["files"].size() << " dataset files under "
            << cfg.out_dir << "/data\n";
  return 0;
}

int cmd_train(const ExperimentConfig& cfg) {
  ensure_out_dir(cfg);
  SplitSet splits;
  splits.train = load_merged(cfg, Split::Train);
  splits.validation = load_merged(cfg, Split::Validation);
  splits.test = load_merged(cfg, Split::Test);

  Model model(cfg.model, cfg.seed);
  model.apply_surgery(cfg.model.nlpn_r_max, cfg.model.nlpn_targets);
  TrainHistory hist = train(model, splits, cfg.train);

  save_checkpoint(model, checkpoint_path(cfg));
  atomic_write_text(out_path(cfg, "history.csv"), hist.to_csv());
  echo_config(cfg, "train");

  double final_acc =
      evaluate_accuracy(model, splits.test, model.full_privilege()).accuracy;
  std::cout << "train: " << cfg.train.steps << " steps; full-rank test accuracy "
            << fmt_double(final_acc) << "; checkpoint at " << checkpoint_path(cfg)
            << "\n";
  return 0;
}

int cmd_frontier(const ExperimentConfig& cfg) {
  ensure_out_dir(cfg);
  Model model = load_compatible_checkpoint(cfg);
  Dataset validation = load_merged(cfg, Split::Validation);
  Dataset test = load_merged(cfg, Split::Test);

  DegradationSurface surface = degradation_surface(model, test, cfg.grid);
  std::vector<FrontierRecord> records =
      build_frontier(model, validation, test, cfg.policies, cfg.grid, cfg.targets);
  std::vector<FrontierRecord> pareto = pareto_filter(records);
  std::vector<SavingsRow> savings = relative_savings(records);

  atomic_write_text(out_path(cfg, "surface.csv"), surface_to_csv(surface));
  atomic_write_text(out_path(cfg, "frontier.csv"), frontier_to_csv(records));

  json summary;
  summary["n_records"] = records.size();
  summary["pareto"] = json::array();
  for (const auto& r : pareto) {
    json e;
    e["policy"] = policy_name(r.kind);
    e["target"] = r.target;
    e["utility"] = r.utility;
    e["avg_privilege"] = r.avg_privilege;
    e["avg_passes"] = r.avg_passes;
    summary["pareto"].push_back(e);
  }
  summary["savings"] = json::array();
  for (const auto& s : savings) {
    json e;
    e["policy"] = policy_name(s.kind);
    e["target"] = s.target;
    e["utility_retention_pct"] = s.utility_retention_pct;
    e["privilege_reduction_pct"] = s.privilege_reduction_pct;
    e["defined"] = s.defined;
    summary["savings"].push_back(e);
  }
  atomic_write_text(out_path(cfg, "frontier_summary.json"), summary.dump(2) + "\n");
  echo_config(cfg, "frontier");
  std::cout << "frontier: " << records.size() << " records, " << pareto.size()
            << " on the pareto front\n";
  return 0;
}

int cmd_sensitivity(const ExperimentConfig& cfg) {
  ensure_out_dir(cfg);
  Model model = load_compatible_checkpoint(cfg);
  std::map<Task, Dataset> datasets;
  for (Task t : cfg.tasks) datasets[t] = load_split(cfg, t, Split::Test);

  std::vector<ModuleCoordinate> coords(model.nlpn_coords().begin(),
                                       model.nlpn_coords().end());
  std::vector<SweepCell> cells = single_module_sweep(model, coords, cfg.grid, datasets);
  apply_bh_mask(cells);
  fill_persistence(cells, cfg.grid);
  atomic_write_text(out_path(cfg, "sensitivity.csv"), sensitivity_to_csv(cells));

  json summary;
  summary["n_cells"] = cells.size();
  std::map<int64_t, int64_t> significant_per_rank;
  for (int64_t g : cfg.grid) significant_per_rank[g] = 0;
  for (const auto& c : cells)
    if (c.significant) significant_per_rank[c.rank] += 1;
  summary["significant_per_rank"] = json::object();
  for (const auto& [g, n] : significant_per_rank)
    summary["significant_per_rank"][std::to_string(g)] = n;
  atomic_write_text(out_path(cfg, "sensitivity_summary.json"), summary.dump(2) + "\n");
  echo_config(cfg, "sensitivity");
  std::cout << "sensitivity: " << cells.size() << " sweep cells written\n";
  return 0;
}

int cmd_suppress(const ExperimentConfig& cfg) {
  ensure_out_dir(cfg);
  Model model = load_compatible_checkpoint(cfg);

  std::map<Task, Dataset> search_sets, holdout_sets;
  for (Task t : cfg.tasks) {
    search_sets[t] = load_split(cfg, t, Split::Validation);
    holdout_sets[t] = load_split(cfg, t, Split::Test);
  }

  SuppressionProblem problem;
  problem.suppress = cfg.suppress_tasks;
  problem.preserve = cfg.preserve_tasks;
  Evaluator search_eval = make_model_evaluator(model, search_sets);
  problem.baseline_accuracy = search_eval(Configuration{});
  problem.validate();

  std::vector<ModuleCoordinate> coords(model.nlpn_coords().begin(),
                                       model.nlpn_coords().end());
  std::vector<SweepCell> cells =
      single_module_sweep(model, coords, cfg.grid, search_sets);
  Shortlist candidates = shortlist(cells, problem);

  SearchLog log;
  ScoredConfiguration best = beam_search(problem, candidates, search_eval, &log);
  best = refine(best, problem, search_eval, model.r_max(), &log);

  atomic_write_text(out_path(cfg, "suppression_log.jsonl"), log_to_jsonl(log));
  atomic_write_text(out_path(cfg, "best_config.json"),
                    configuration_to_control_json(best.config, model.r_max()) + "\n");

  Evaluator holdout_eval = make_model_evaluator(model, holdout_sets);
  std::map<Task, double> holdout_base = holdout_eval(Configuration{});
  std::map<Task, double> holdout_best = holdout_eval(best.config);

  json summary;
  summary["score"] = best.score;
  summary["evaluator_calls"] = log.evaluator_calls;
  summary["shortlist_empty"] = candidates.empty_flagged;
  summary["interventions"] = json::object();
  for (const auto& [coord, rank] : best.config)
    summary["interventions"][coord.key()] = rank;
  summary["holdout"] = json::object();
  for (Task t : cfg.tasks) {
    json e;
    e["baseline_accuracy"] = holdout_base.at(t);
    e["suppressed_accuracy"] = holdout_best.at(t);
    e["drop"] = holdout_base.at(t) - holdout_best.at(t);
    summary["holdout"][task_name(t)] = e;
  }
  atomic_write_text(out_path(cfg, "suppress_summary.json"), summary.dump(2) + "\n");
  echo_config(cfg, "suppress");
  std::cout << "suppress: best score " << fmt_double(best.score) << " with "
            << best.config.size() << " interventions\n";
  return 0;
}

int cmd_probe(const ExperimentConfig& cfg) {
  ensure_out_dir(cfg);
  Model model = load_compatible_checkpoint(cfg);
  Dataset probe_train = load_merged(cfg, Split::Validation);
  Dataset eval_set = load_merged(cfg, Split::Test);

  std::vector<CapacityRow> rows =
      capacity_curve(model, probe_train, eval_set, cfg.grid, cfg.seed);
  atomic_write_text(out_path(cfg, "capacity_curve.csv"), capacity_to_csv(rows, cfg.seed));

  json summary;
  summary["rows"] = json::array();
  for (const auto& r : rows) {
    json e;
    e["rank"] = r.rank;
    e["baseline_accuracy"] = r.baseline_accuracy;
    e["suppressed_behavioral_accuracy"] = r.suppressed_behavioral_accuracy;
    e["probe_accuracy"] = r.probe_accuracy;
    summary["rows"].push_back(e);
  }
  const CapacityRow& top = rows.back();
  summary["masking_gap_at_full_rank"] =
      top.probe_accuracy - top.suppressed_behavioral_accuracy;
  summary["probe_accuracy_at_min_rank"] = rows.front().probe_accuracy;
  atomic_write_text(out_path(cfg, "probe_summary.json"), summary.dump(2) + "\n");
  echo_config(cfg, "probe");
  std::cout << "probe: capacity curve over " << rows.size() << " ranks written\n";
  return 0;
}

// Re-factor a trained model's effective weights with a fresh SVD: prefixes of
// the new factors are the optimal truncations of the trained map, but nothing
// below full rank was ever trained.
void resvd_factors(Model& model) {
  for (const auto& coord : model.nlpn_coords()) {
    NestedLinear layer;
    layer.A = model.params().get(coord.key() + ".A").value;
    layer.B = model.params().get(coord.key() + ".B").value;
    layer.r_max = model.r_max();
    layer.active_rank = model.r_max();
    Tensor w = effective_weight(layer, model.r_max());
    SvdFactors f = truncated_svd(w, model.r_max());
    model.params().get(coord.key() + ".A").value = std::move(f.A);
    model.params().get(coord.key() + ".B").value = std::move(f.B);
  }
}

int cmd_svd_compare(const ExperimentConfig& cfg) {
  ensure_out_dir(cfg);
  SplitSet splits;
  splits.train = load_merged(cfg, Split::Train);
  splits.validation = load_merged(cfg, Split::Validation);
  splits.test = load_merged(cfg, Split::Test);

  // Shared starting point: one model trained at the anchor rank only.
  Model anchor(cfg.model, cfg.seed);
  anchor.apply_surgery(cfg.model.nlpn_r_max, cfg.model.nlpn_targets);
  TrainConfig anchor_cfg = cfg.train;
  anchor_cfg.anchor_only = true;
  train(anchor, splits, anchor_cfg);

  // Branch A: truncation only — re-SVD the trained weights, no further steps.
  Model svd_branch = anchor;
  resvd_factors(svd_branch);

  // Branch B: continue with multi-privilege training from the same weights.
  Model nlpn_branch = anchor;
  TrainConfig nlpn_cfg = cfg.train;
  nlpn_cfg.anchor_only = false;
  nlpn_cfg.seed = cfg.seed + 1;
  if (cfg.svd_compare_steps > 0) nlpn_cfg.steps = cfg.svd_compare_steps;
  train(nlpn_branch, splits, nlpn_cfg);

  // The two middle grid ranks, where the curves separate most cleanly.
  size_t n = cfg.grid.size();
  size_t hi = n / 2;
  size_t lo = (n % 2 == 0) ? (n - 1) / 2 : hi - 1;
  std::vector<int64_t> mid_ranks = {cfg.grid[lo], cfg.grid[hi]};

  CsvBuilder csv({"rank", "svd_truncation_loss", "nlpn_trained_loss"});
  json summary;
  summary["ranks"] = json::array();
  bool nlpn_better_everywhere = true;
  for (int64_t g : mid_ranks) {
    double svd_loss = evaluate_mean_loss(svd_branch, splits.test, ControlVector::global(g));
    double nlpn_loss =
        evaluate_mean_loss(nlpn_branch, splits.test, ControlVector::global(g));
    csv.row({std::to_string(g), fmt_double(svd_loss), fmt_double(nlpn_loss)});
    json e;
    e["rank"] = g;
    e["svd_truncation_loss"] = svd_loss;
    e["nlpn_trained_loss"] = nlpn_loss;
    summary["ranks"].push_back(e);
    nlpn_better_everywhere = nlpn_better_everywhere && nlpn_loss < svd_loss;
  }
  summary["nlpn_better_everywhere"] = nlpn_better_everywhere;
  csv.save(out_path(cfg, "svd_compare.csv"));
  atomic_write_text(out_path(cfg, "svd_compare_summary.json"), summary.dump(2) + "\n");
  echo_config(cfg, "svd-compare");
  std::cout << "svd-compare: nlpn better at all middle ranks = "
            << (nlpn_better_everywhere ? "true" : "false") << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"least-privilege inference experiments"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::string config_path;
  std::optional<uint64_t> seed_override;
  std::string out_override;
  int threads = 1;
  app.add_option("--config", config_path, "experiment config JSON")->required();
  app.add_option("--seed", seed_override, "override the config seed");
  app.add_option("--out", out_override, "override the config output directory");
  app.add_option("--threads", threads, "worker threads (this build is single-threaded)")
      ->check(CLI::PositiveNumber);

  std::map<std::string, int (*)(const ExperimentConfig&)> commands = {
      {"gen-data", cmd_gen_data},   {"train", cmd_train},
      {"frontier", cmd_frontier},   {"sensitivity", cmd_sensitivity},
      {"suppress", cmd_suppress},   {"probe", cmd_probe},
      {"svd-compare", cmd_svd_compare}};
  for (const auto& [name, fn] : commands) {
    (void)fn;
    app.add_subcommand(name);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    std::ifstream in(config_path);
    if (!in) throw lpn::IoError("cannot open config: " + config_path);
    json j = json::parse(in);
    ExperimentConfig cfg = parse_config(j);
    if (seed_override) {
      cfg.seed = *seed_override;
      cfg.train.seed = *seed_override;
    }
    if (!out_override.empty()) cfg.out_dir = out_override;
    return commands.at(app.get_subcommands().front()->get_name())(cfg);
  } catch (const lpn::CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const lpn::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
