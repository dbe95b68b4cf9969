#include "lpn/probe.hpp"

#include <algorithm>
#include <cmath>

#include "lpn/experiment.hpp"

namespace lpn {

namespace {

constexpr double kConvergenceTol = 1e-6;
constexpr int kMaxIterations = 5000;

double standardized(const LinearProbe& p, const double* x, int64_t j) {
  return (x[j] - p.feat_mean.data[j]) / p.feat_std.data[j];
}

}  // namespace

LinearProbe fit_linear_probe(const ProbeDataset& train, uint64_t seed) {
  (void)seed;  // zero-init is already deterministic; kept for interface stability
  const int64_t n = train.features.rows();
  const int64_t d = train.features.cols();
  if (n == 0) throw ArgumentError("fit_linear_probe: empty dataset");
  if (static_cast<int64_t>(train.labels.size()) != n)
    throw ArgumentError("fit_linear_probe: features/labels size mismatch");

  LinearProbe probe;
  probe.w = Tensor::zeros({1, d});
  probe.feat_mean = Tensor::zeros({1, d});
  probe.feat_std = Tensor::zeros({1, d});

  int64_t positives = 0;
  for (uint8_t y : train.labels) positives += y;
  if (positives == 0 || positives == n) {
    probe.degenerate = true;
    probe.constant_class = positives ? 1 : 0;
    probe.feat_std.fill(1.0);
    return probe;
  }

  // standardize features on the training set for a well-conditioned descent
  for (int64_t j = 0; j < d; ++j) {
    double m = 0.0;
    for (int64_t i = 0; i < n; ++i) m += train.features.at(i, j);
    m /= static_cast<double>(n);
    double v = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double dev = train.features.at(i, j) - m;
      v += dev * dev;
    }
    probe.feat_mean.data[j] = m;
    probe.feat_std.data[j] = std::max(std::sqrt(v / static_cast<double>(n)), 1e-8);
  }

  const double lr = 0.5;
  double prev_loss = std::numeric_limits<double>::infinity();
  Tensor gw = Tensor::zeros({1, d});
  for (int it = 0; it < kMaxIterations; ++it) {
    double loss = 0.0, gb = 0.0;
    gw.fill(0.0);
    for (int64_t i = 0; i < n; ++i) {
      const double* x = train.features.data.data() + i * d;
      double z = probe.b;
      for (int64_t j = 0; j < d; ++j) z += probe.w.data[j] * standardized(probe, x, j);
      double p = 1.0 / (1.0 + std::exp(-z));
      double y = static_cast<double>(train.labels[i]);
      loss += y > 0.5 ? -std::log(std::max(p, 1e-300))
                      : -std::log(std::max(1.0 - p, 1e-300));
      double err = (p - y) / static_cast<double>(n);
      gb += err;
      for (int64_t j = 0; j < d; ++j) gw.data[j] += err * standardized(probe, x, j);
    }
    loss /= static_cast<double>(n);
    for (int64_t j = 0; j < d; ++j) probe.w.data[j] -= lr * gw.data[j];
    probe.b -= lr * gb;
    probe.iterations = it + 1;
    if (std::abs(prev_loss - loss) < kConvergenceTol) break;
    prev_loss = loss;
  }
  return probe;
}

bool probe_predict(const LinearProbe& probe, const double* features, int64_t d) {
  if (probe.degenerate) return probe.constant_class != 0;
  double z = probe.b;
  for (int64_t j = 0; j < d; ++j) z += probe.w.data[j] * standardized(probe, features, j);
  return z >= 0.0;
}

double probe_accuracy(const LinearProbe& probe, const ProbeDataset& ds) {
  const int64_t n = ds.features.rows();
  if (n == 0) throw ArgumentError("probe_accuracy: empty dataset");
  const int64_t d = ds.features.cols();
  int64_t hits = 0;
  for (int64_t i = 0; i < n; ++i)
    hits += probe_predict(probe, ds.features.data.data() + i * d, d) ==
            (ds.labels[i] != 0);
  return static_cast<double>(hits) / static_cast<double>(n);
}

ProbeDataset collect_probe_dataset(Model& model, const Dataset& ds, int64_t rank,
                                   bool suppressed_mode, int site) {
  ProbeDataset out;
  out.rank = rank;
  out.suppressed_mode = suppressed_mode;
  const int64_t d = model.config().d_model;
  out.features = Tensor::zeros({static_cast<int64_t>(ds.instances.size()), d});
  ControlVector cv = ControlVector::global(rank);
  for (size_t i = 0; i < ds.instances.size(); ++i) {
    Tensor act = model.collect_activations(
        encode_instance(ds.instances[i], suppressed_mode), cv, site);
    for (int64_t j = 0; j < d; ++j) out.features.at(static_cast<int64_t>(i), j) = act.at(0, j);
    out.labels.push_back(ds.instances[i].label ? 1 : 0);
  }
  return out;
}

TrainHistory train_suppression_mode(Model& model, const SplitSet& splits,
                                    TrainConfig cfg) {
  cfg.mode_mixture = true;
  return train(model, splits, cfg);
}

std::vector<CapacityRow> capacity_curve(Model& model, const Dataset& probe_train,
                                        const Dataset& eval_set,
                                        const std::vector<int64_t>& grid,
                                        uint64_t seed) {
  if (grid.empty()) throw ArgumentError("capacity_curve: empty rank grid");
  const int site = static_cast<int>(model.config().n_layers) - 1;
  std::vector<CapacityRow> rows;
  for (int64_t g : grid) {
    CapacityRow row;
    row.rank = g;
    ControlVector cv = ControlVector::global(g);
    row.baseline_accuracy = evaluate_accuracy(model, eval_set, cv).accuracy;
    row.suppressed_behavioral_accuracy =
        evaluate_suppressed_accuracy(model, eval_set, cv).accuracy;
    auto train_ds = collect_probe_dataset(model, probe_train, g, true, site);
    auto test_ds = collect_probe_dataset(model, eval_set, g, true, site);
    row.probe_accuracy = probe_accuracy(fit_linear_probe(train_ds, seed), test_ds);
    rows.push_back(row);
  }
  return rows;
}

std::string capacity_to_csv(const std::vector<CapacityRow>& rows, uint64_t seed) {
  CsvBuilder csv({"rank", "baseline_acc", "suppressed_behavioral_acc", "probe_acc",
                  "seed"});
  for (const auto& r : rows)
    csv.row({std::to_string(r.rank), fmt_double(r.baseline_accuracy),
             fmt_double(r.suppressed_behavioral_accuracy), fmt_double(r.probe_accuracy),
             std::to_string(seed)});
  return csv.text();
}

}  // namespace lpn
