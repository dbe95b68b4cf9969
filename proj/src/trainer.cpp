#include "lpn/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "lpn/experiment.hpp"

namespace lpn {

void TrainConfig::validate() const {
  if (steps < 0) throw ArgumentError("steps must be >= 0");
  if (batch_size <= 0) throw ArgumentError("batch_size must be positive");
  if (r_max < 1) throw ArgumentError("r_max must be >= 1");
  if (eval_every <= 0) throw ArgumentError("eval_every must be positive");
  if (lr_final < 0.0) throw ArgumentError("lr_final must be non-negative");
  if (variant_sampling == VariantSampling::Grid) {
    if (rank_grid.empty()) throw ArgumentError("grid sampling needs a rank_grid");
    for (int64_t g : rank_grid)
      if (g < 0 || g > r_max)
        throw ArgumentError("rank_grid entry " + std::to_string(g) +
                            " outside [0, r_max]");
  }
  for (int64_t g : eval_grid)
    if (g < 0 || g > r_max)
      throw ArgumentError("eval_grid entry " + std::to_string(g) + " outside [0, r_max]");
}

int64_t sample_variant(Rng& rng, const TrainConfig& cfg) {
  if (cfg.variant_sampling == VariantSampling::AllIntegers)
    return rng.uniform_int(0, cfg.r_max - 1);
  // grid mode: uniform over grid entries strictly below the anchor
  std::vector<int64_t> below;
  for (int64_t g : cfg.rank_grid)
    if (g < cfg.r_max) below.push_back(g);
  if (below.empty()) throw ArgumentError("rank_grid has no entry below r_max");
  return below[rng.uniform_int(0, static_cast<int64_t>(below.size()) - 1)];
}

double total_loss(double loss_anchor, double loss_variant, double s_anchor,
                  double s_variant) {
  return (std::exp(-s_anchor) * loss_anchor + s_anchor) +
         (std::exp(-s_variant) * loss_variant + s_variant);
}

namespace {

enum class PassMode { Plain, Mixture, AllSuppressed };

// Batched last-position cross-entropy at one privilege setting, on the shared
// tape so both passes contribute to a single backward.
NodeRef batch_loss(Model& model, Tape& tape, const std::vector<TaskInstance>& batch,
                   const ControlVector& control, PassMode mode) {
  const auto& tok = Tokenizer::get();
  std::vector<NodeRef> rows;
  std::vector<int> targets;
  rows.reserve(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    bool suppressed = mode == PassMode::AllSuppressed ||
                      (mode == PassMode::Mixture && i % 2 == 1);
    auto tokens = encode_instance(batch[i], suppressed);
    NodeRef logits = model.forward_node(tape, tokens, control);
    rows.push_back(tape.take_row(logits, static_cast<int64_t>(tokens.size()) - 1));
    targets.push_back(suppressed ? tok.refuse_id() : label_token(batch[i].label));
  }
  return tape.cross_entropy(tape.concat_rows(rows), targets);
}

}  // namespace

StepMetrics train_step(Model& model, const std::vector<TaskInstance>& batch, Rng& rng,
                       const TrainConfig& cfg) {
  if (!model.surgered()) throw StateError("train_step: model has not been surgered");
  if (batch.empty()) throw ArgumentError("train_step: empty batch");
  if (!model.params().has(kLogVarsName))
    model.params().add(kLogVarsName, Tensor::zeros({1, cfg.r_max + 1}));

  StepMetrics m;
  if (cfg.anchor_only) {
    Tape tape;
    NodeRef la = batch_loss(model, tape, batch, ControlVector::global(cfg.r_max),
                            cfg.mode_mixture ? PassMode::Mixture : PassMode::Plain);
    m.g = cfg.r_max;
    m.loss_anchor = la->value.data[0];
    m.loss_total = m.loss_anchor;
    model.params().zero_grad();
    tape.backward(la);
    AdamConfig opt;
    opt.lr = cfg.lr;
    model.params().adam_step(opt);
    return m;
  }
  m.g = sample_variant(rng, cfg);

  // Capability scoping: the variant pass trains only the tasks granted to the
  // low-privilege subspace; everything else stays anchor-only.
  std::vector<TaskInstance> variant_batch;
  if (cfg.variant_tasks.empty()) {
    variant_batch = batch;
  } else {
    for (const auto& inst : batch)
      if (cfg.variant_tasks.count(inst.task)) variant_batch.push_back(inst);
    if (variant_batch.empty()) {
      TrainConfig anchor_cfg = cfg;
      anchor_cfg.anchor_only = true;
      return train_step(model, batch, rng, anchor_cfg);
    }
  }

  Tape tape;
  PassMode anchor_mode = cfg.mode_mixture ? PassMode::Mixture : PassMode::Plain;
  PassMode variant_mode = cfg.variant_suppressed ? PassMode::AllSuppressed : anchor_mode;
  NodeRef la = batch_loss(model, tape, batch, ControlVector::global(cfg.r_max),
                          anchor_mode);
  NodeRef lg = batch_loss(model, tape, variant_batch, ControlVector::global(m.g),
                          variant_mode);
  NodeRef log_vars = tape.param(model.params(), kLogVarsName);
  NodeRef sa = tape.pick(log_vars, cfg.r_max);
  NodeRef sg = tape.pick(log_vars, m.g);
  NodeRef loss = tape.add(tape.add(tape.mul(tape.exp(tape.neg(sa)), la), sa),
                          tape.add(tape.mul(tape.exp(tape.neg(sg)), lg), sg));

  m.loss_anchor = la->value.data[0];
  m.loss_variant = lg->value.data[0];
  m.loss_total = loss->value.data[0];
  m.s_anchor = sa->value.data[0];
  m.s_g = sg->value.data[0];

  model.params().zero_grad();
  tape.backward(loss);
  AdamConfig opt;
  opt.lr = cfg.lr;
  model.params().adam_step(opt);
  return m;
}

TrainHistory train(Model& model, const SplitSet& splits, const TrainConfig& cfg) {
  cfg.validate();
  if (splits.train.instances.empty()) throw ArgumentError("train: empty training split");
  TrainHistory hist;
  hist.eval_grid = cfg.eval_grid;

  Rng rng(cfg.seed);
  Rng batch_rng = rng.fork(0xba7c4);
  Rng variant_rng = rng.fork(0x9a9);

  const int64_t n = static_cast<int64_t>(splits.train.instances.size());
  for (int64_t step = 1; step <= cfg.steps; ++step) {
    std::vector<TaskInstance> batch;
    batch.reserve(cfg.batch_size);
    for (int64_t i = 0; i < cfg.batch_size; ++i)
      batch.push_back(splits.train.instances[batch_rng.uniform_int(0, n - 1)]);

    TrainConfig step_cfg = cfg;
    if (cfg.cosine_lr && cfg.steps > 1) {
      double t = static_cast<double>(step - 1) / static_cast<double>(cfg.steps - 1);
      step_cfg.lr = cfg.lr_final +
                    0.5 * (cfg.lr - cfg.lr_final) * (1.0 + std::cos(3.14159265358979 * t));
    }

    HistoryRow row;
    row.step = step;
    row.metrics = train_step(model, batch, variant_rng, step_cfg);
    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      for (int64_t g : cfg.eval_grid)
        row.val_accuracy.push_back(
            evaluate_accuracy(model, splits.validation, ControlVector::global(g))
                .accuracy);
    }
    hist.rows.push_back(std::move(row));
  }
  return hist;
}

std::string TrainHistory::to_csv() const {
  std::vector<std::string> header = {"step",       "sampled_g", "loss_anchor",
                                     "loss_variant", "loss_total", "s_anchor",
                                     "s_g"};
  for (int64_t g : eval_grid) header.push_back("val_acc_r" + std::to_string(g));
  CsvBuilder csv(header);
  for (const auto& r : rows) {
    std::vector<std::string> cells = {
        std::to_string(r.step),           std::to_string(r.metrics.g),
        fmt_double(r.metrics.loss_anchor), fmt_double(r.metrics.loss_variant),
        fmt_double(r.metrics.loss_total),  fmt_double(r.metrics.s_anchor),
        fmt_double(r.metrics.s_g)};
    for (size_t i = 0; i < eval_grid.size(); ++i)
      cells.push_back(i < r.val_accuracy.size() ? fmt_double(r.val_accuracy[i]) : "");
    csv.row(cells);
  }
  return csv.text();
}

double evaluate_mean_loss(Model& model, const Dataset& ds, const ControlVector& control) {
  if (ds.instances.empty()) throw ArgumentError("evaluate_mean_loss: empty dataset");
  double total = 0.0;
  for (const auto& inst : ds.instances) {
    Tensor logits = model.forward_last_logits(encode_instance(inst), control);
    int target = label_token(inst.label);
    double mx = logits.data[0];
    for (double v : logits.data) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : logits.data) s += std::exp(v - mx);
    total += mx + std::log(s) - logits.data[static_cast<size_t>(target)];
  }
  return total / static_cast<double>(ds.instances.size());
}

EvalResult evaluate_suppressed_accuracy(Model& model, const Dataset& ds,
                                        const ControlVector& control) {
  const auto& tok = Tokenizer::get();
  EvalResult out;
  out.correct.reserve(ds.instances.size());
  int64_t hits = 0;
  for (const auto& inst : ds.instances) {
    Tensor logits =
        model.forward_last_logits(encode_instance(inst, /*mode_prefix=*/true), control);
    double lt = logits.at(0, tok.true_id());
    double lf = logits.at(0, tok.false_id());
    double lr = logits.at(0, tok.refuse_id());
    bool ok;
    if (lr >= lt && lr >= lf) {
      ok = false;  // refusal never matches the label
    } else {
      ok = (lt >= lf) == inst.label;
    }
    out.correct.push_back(ok ? 1 : 0);
    hits += ok;
  }
  out.accuracy = ds.instances.empty()
                     ? 0.0
                     : static_cast<double>(hits) / static_cast<double>(ds.instances.size());
  return out;
}

}  // namespace lpn
