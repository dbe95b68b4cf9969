#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "lpn/common.hpp"
#include "lpn/trainer.hpp"

using namespace lpn;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_mlp = 24;
  cfg.max_seq_len = 48;
  cfg.nlpn_r_max = 8;
  return cfg;
}

TrainConfig tiny_train_config() {
  TrainConfig cfg;
  cfg.r_max = 8;
  cfg.eval_grid = {2, 4, 8};
  cfg.batch_size = 8;
  cfg.seed = 5;
  return cfg;
}

Model surgered_model(uint64_t seed) {
  Model m(tiny_config(), seed);
  m.apply_surgery(8, kMlpFamilies);
  return m;
}

}  // namespace

TEST_CASE("sample_variant: support and near-uniform frequencies") {
  TrainConfig cfg;
  cfg.r_max = 4;
  Rng rng(3);
  std::map<int64_t, int> counts;
  const int n = 10000;
  for (int i = 0; i < n; ++i) counts[sample_variant(rng, cfg)]++;
  REQUIRE(counts.size() == 4);
  for (auto& [g, c] : counts) {
    CHECK(g >= 0);
    CHECK(g <= 3);
    // 3 sigma of Binomial(1e4, 1/4)
    double sigma = std::sqrt(n * 0.25 * 0.75);
    CHECK(std::abs(c - n * 0.25) < 3.0 * sigma);
  }
}

TEST_CASE("sample_variant grid mode never returns the anchor") {
  TrainConfig cfg;
  cfg.r_max = 32;
  cfg.variant_sampling = VariantSampling::Grid;
  cfg.rank_grid = {2, 4, 8, 16, 32};
  Rng rng(1);
  for (int i = 0; i < 5000; ++i) {
    int64_t g = sample_variant(rng, cfg);
    CHECK(g != 32);
    CHECK((g == 2 || g == 4 || g == 8 || g == 16));
  }
}

TEST_CASE("sample_variant is a deterministic function of the rng state") {
  TrainConfig cfg;
  cfg.r_max = 16;
  Rng a(9), b(9);
  for (int i = 0; i < 200; ++i) CHECK(sample_variant(a, cfg) == sample_variant(b, cfg));
}

TEST_CASE("total_loss: frozen examples") {
  CHECK(total_loss(1.0, 2.0, 0.0, 0.0) == doctest::Approx(3.0).epsilon(1e-15));
  // anchor term only: exp(-ln 2)*1 + ln 2 = 0.5 + ln 2
  CHECK(total_loss(1.0, 0.0, std::log(2.0), 0.0) ==
        doctest::Approx(0.5 + std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("total_loss matches the formula on 1000 random inputs") {
  Rng rng(44);
  for (int i = 0; i < 1000; ++i) {
    double la = 3.0 * rng.uniform(), lg = 3.0 * rng.uniform();
    double sa = 2.0 * rng.normal(), sg = 2.0 * rng.normal();
    double expect = (std::exp(-sa) * la + sa) + (std::exp(-sg) * lg + sg);
    CHECK(std::abs(total_loss(la, lg, sa, sg) - expect) < 1e-12);
  }
}

TEST_CASE("d(total_loss)/ds = 1 - exp(-s)L, checked by finite differences") {
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    double la = 3.0 * rng.uniform() + 0.01, sa = rng.normal();
    double analytic = 1.0 - std::exp(-sa) * la;
    double h = 1e-6;
    double fd =
        (total_loss(la, 0.5, sa + h, 0.0) - total_loss(la, 0.5, sa - h, 0.0)) / (2 * h);
    CHECK(analytic == doctest::Approx(fd).epsilon(1e-6));
    // stationary point sits at s = ln L
    CHECK(1.0 - std::exp(-std::log(la)) * la == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("train_step requires a surgered model and a non-empty batch") {
  Model dense(tiny_config(), 2);
  auto ds = make_dataset(Task::BalancedBrackets, {1}, 8, 1, Split::Train);
  std::vector<TaskInstance> batch(ds.instances.begin(), ds.instances.begin() + 4);
  Rng rng(1);
  auto cfg = tiny_train_config();
  CHECK_THROWS_AS(train_step(dense, batch, rng, cfg), StateError);
  Model m = surgered_model(2);
  std::vector<TaskInstance> empty;
  CHECK_THROWS_AS(train_step(m, empty, rng, cfg), ArgumentError);
}

TEST_CASE("lr=0 leaves parameter values unchanged but still reports losses") {
  Model m = surgered_model(3);
  auto ds = make_dataset(Task::BalancedBrackets, {1, 2}, 8, 2, Split::Train);
  std::vector<TaskInstance> batch(ds.instances.begin(), ds.instances.begin() + 8);
  auto cfg = tiny_train_config();
  cfg.lr = 0.0;
  Rng rng(4);
  auto snapshot = [&] {
    std::map<std::string, std::vector<double>> vals;
    for (const auto& [name, p] : m.params()) vals[name] = p.value.data;
    return vals;
  };
  train_step(m, batch, rng, cfg);  // creates log_vars
  auto before = snapshot();
  auto metrics = train_step(m, batch, rng, cfg);
  CHECK(metrics.loss_anchor > 0.0);
  CHECK(metrics.loss_variant > 0.0);
  CHECK(std::isfinite(metrics.loss_total));
  auto after = snapshot();
  for (const auto& [name, v] : before) {
    const auto& w = after.at(name);
    for (size_t i = 0; i < v.size(); ++i) CHECK(v[i] == w[i]);
  }
}

TEST_CASE("metric trace is reproducible under a fixed seed") {
  auto ds = make_dataset(Task::BalancedBrackets, {1, 2}, 16, 3, Split::Train);
  auto run = [&] {
    Model m = surgered_model(6);
    Rng rng(11);
    auto cfg = tiny_train_config();
    std::vector<StepMetrics> trace;
    for (int s = 0; s < 5; ++s) {
      std::vector<TaskInstance> batch(ds.instances.begin() + s * 4,
                                      ds.instances.begin() + s * 4 + 4);
      trace.push_back(train_step(m, batch, rng, cfg));
    }
    return trace;
  };
  auto a = run(), b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].g == b[i].g);
    CHECK(a[i].loss_anchor == b[i].loss_anchor);
    CHECK(a[i].loss_variant == b[i].loss_variant);
    CHECK(a[i].loss_total == b[i].loss_total);
  }
}

TEST_CASE("loss_total equals the formula applied to the reported parts") {
  Model m = surgered_model(8);
  auto ds = make_dataset(Task::BalancedBrackets, {1, 2}, 8, 4, Split::Train);
  std::vector<TaskInstance> batch(ds.instances.begin(), ds.instances.begin() + 6);
  Rng rng(2);
  auto cfg = tiny_train_config();
  for (int i = 0; i < 5; ++i) {
    auto mm = train_step(m, batch, rng, cfg);
    CHECK(std::abs(mm.loss_total -
                   total_loss(mm.loss_anchor, mm.loss_variant, mm.s_anchor, mm.s_g)) <
          1e-12);
  }
}

TEST_CASE("variant pass alone sends no gradient beyond its active rank") {
  // the invariant: rows i >= g of A get gradient only from the anchor pass
  Model m = surgered_model(13);
  auto ds = make_dataset(Task::BalancedBrackets, {1}, 8, 5, Split::Train);
  std::vector<TaskInstance> batch(ds.instances.begin(), ds.instances.begin() + 4);
  const int64_t g = 3;
  Tape tape;
  std::vector<NodeRef> rows;
  std::vector<int> targets;
  for (const auto& inst : batch) {
    auto toks = encode_instance(inst);
    NodeRef logits = m.forward_node(tape, toks, ControlVector::global(g));
    rows.push_back(tape.take_row(logits, static_cast<int64_t>(toks.size()) - 1));
    targets.push_back(label_token(inst.label));
  }
  NodeRef variant_only = tape.cross_entropy(tape.concat_rows(rows), targets);
  m.params().zero_grad();
  tape.backward(variant_only);
  for (const auto& coord : m.nlpn_coords()) {
    const auto& gA = m.params().get(coord.key() + ".A").grad;
    const auto& gB = m.params().get(coord.key() + ".B").grad;
    for (int64_t i = g; i < gA.rows(); ++i)
      for (int64_t j = 0; j < gA.cols(); ++j) CHECK(gA.at(i, j) == 0.0);
    for (int64_t i = 0; i < gB.rows(); ++i)
      for (int64_t j = g; j < gB.cols(); ++j) CHECK(gB.at(i, j) == 0.0);
  }
}

TEST_CASE("train: steps=0 leaves the model unchanged, empty history") {
  Model m = surgered_model(21);
  uint64_t before = m.param_checksum();
  auto splits = make_splits(Task::BalancedBrackets, {1}, 16, 8, 8, 9);
  auto cfg = tiny_train_config();
  cfg.steps = 0;
  auto hist = train(m, splits, cfg);
  CHECK(hist.rows.empty());
  CHECK(m.param_checksum() == before);
}

TEST_CASE("train: history rows equal steps; eval columns appear on schedule") {
  Model m = surgered_model(22);
  auto splits = make_splits(Task::BalancedBrackets, {1}, 24, 8, 8, 10);
  auto cfg = tiny_train_config();
  cfg.steps = 7;
  cfg.eval_every = 3;
  auto hist = train(m, splits, cfg);
  REQUIRE(hist.rows.size() == 7);
  for (const auto& r : hist.rows) {
    bool eval_step = (r.step % 3 == 0) || r.step == 7;
    CHECK(r.val_accuracy.size() == (eval_step ? hist.eval_grid.size() : 0));
  }
  // csv shape: header + one line per step
  std::string csv = hist.to_csv();
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 8);
  CHECK(csv.substr(0, 5) == "step,");
}

TEST_CASE("short training run reduces the anchor loss and moves s toward ln L") {
  Model m = surgered_model(30);
  auto splits = make_splits(Task::BalancedBrackets, {1, 2}, 60, 20, 20, 30);
  auto cfg = tiny_train_config();
  cfg.steps = 250;
  cfg.eval_every = 250;
  cfg.lr = 3e-3;
  auto hist = train(m, splits, cfg);
  auto mean_anchor = [&](size_t lo, size_t hi) {
    double s = 0.0;
    for (size_t i = lo; i < hi; ++i) s += hist.rows[i].metrics.loss_anchor;
    return s / static_cast<double>(hi - lo);
  };
  double early = mean_anchor(0, 20);
  double late = mean_anchor(hist.rows.size() - 20, hist.rows.size());
  CHECK(late < early);
  // stationary-point check, broad band: s_rmax tracks ln of the running anchor loss
  double s_final = hist.rows.back().metrics.s_anchor;
  CHECK(std::abs(s_final - std::log(std::max(late, 1e-6))) < 1.5);
  // log-variances exist for every privilege 0..r_max
  const auto& lv = m.params().get(kLogVarsName).value;
  CHECK(lv.numel() == cfg.r_max + 1);
}

TEST_CASE("mode mixture: half the batch is supervised to refuse") {
  Model m = surgered_model(31);
  auto splits = make_splits(Task::BalancedBrackets, {1}, 32, 8, 8, 12);
  auto cfg = tiny_train_config();
  cfg.steps = 60;
  cfg.eval_every = 60;
  cfg.mode_mixture = true;
  cfg.lr = 5e-3;
  train(m, splits, cfg);
  // after refusal training, MODE-prefixed behavioral accuracy sits well below
  // the no-prefix accuracy ceiling because REFUSE wins the restricted argmax
  auto sup = evaluate_suppressed_accuracy(m, splits.test, ControlVector::global(8));
  CHECK(sup.accuracy <= 0.6);
}

TEST_CASE("evaluate_suppressed_accuracy scores refusals as incorrect") {
  Model m = surgered_model(32);
  auto ds = make_dataset(Task::BalancedBrackets, {1}, 6, 13, Split::Test);
  auto res = evaluate_suppressed_accuracy(m, ds, ControlVector::global(8));
  REQUIRE(res.correct.size() == ds.instances.size());
  CHECK(res.accuracy >= 0.0);
  CHECK(res.accuracy <= 1.0);
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  cfg.steps = -1;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
  cfg = TrainConfig{};
  cfg.variant_sampling = VariantSampling::Grid;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);  // missing grid
  cfg.rank_grid = {2, 64};
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);  // entry above r_max
}

TEST_CASE("cosine lr decay changes the trajectory and stays deterministic") {
  auto splits = make_splits(Task::BalancedBrackets, {1}, 24, 8, 8, 21);
  TrainConfig cfg = tiny_train_config();
  cfg.steps = 12;
  cfg.eval_every = 12;
  cfg.cosine_lr = true;
  cfg.lr_final = 0.0;

  Model a = surgered_model(6);
  Model b = surgered_model(6);
  auto ha = train(a, splits, cfg);
  auto hb = train(b, splits, cfg);
  CHECK(ha.to_csv() == hb.to_csv());  // schedule is part of the deterministic recipe

  Model c = surgered_model(6);
  TrainConfig constant = cfg;
  constant.cosine_lr = false;
  auto hc = train(c, splits, constant);
  CHECK(ha.to_csv() != hc.to_csv());

  cfg.lr_final = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
}

TEST_CASE("variant_tasks scopes the low-rank pass to the granted tasks") {
  // merge two tasks; grant only brackets to the variant pass
  auto brackets = make_splits(Task::BalancedBrackets, {1}, 24, 8, 8, 22);
  auto contains = make_splits(Task::ContainsSubstring, {1}, 24, 8, 8, 23);
  SplitSet merged = brackets;
  merged.train.instances.insert(merged.train.instances.end(),
                                contains.train.instances.begin(),
                                contains.train.instances.end());

  TrainConfig cfg = tiny_train_config();
  cfg.steps = 12;
  cfg.eval_every = 12;
  cfg.variant_tasks = {Task::BalancedBrackets};

  Model a = surgered_model(7);
  Model b = surgered_model(7);
  auto ha = train(a, merged, cfg);
  auto hb = train(b, merged, cfg);
  CHECK(ha.to_csv() == hb.to_csv());  // scoping is deterministic

  // scoping changes the trajectory relative to the unscoped run
  Model c = surgered_model(7);
  TrainConfig unscoped = cfg;
  unscoped.variant_tasks.clear();
  auto hc = train(c, merged, unscoped);
  CHECK(ha.to_csv() != hc.to_csv());

  // a scope that matches nothing in the batch degenerates to anchor-only steps
  Model d = surgered_model(7);
  TrainConfig off_scope = cfg;
  off_scope.variant_tasks = {Task::LengthComparison};
  auto hd = train(d, brackets, off_scope);
  for (const auto& row : hd.rows) CHECK(row.metrics.loss_variant == 0.0);
}
