#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lpn/common.hpp"
#include "lpn/frontier.hpp"

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

Model surgered_model(uint64_t seed) {
  Model m(tiny_config(), seed);
  m.apply_surgery(8, kMlpFamilies);
  return m;
}

FrontierRecord rec(double utility, double privilege) {
  FrontierRecord r;
  r.utility = utility;
  r.avg_privilege = privilege;
  return r;
}

// independent O(n^2) domination scan
std::vector<FrontierRecord> brute_pareto(const std::vector<FrontierRecord>& rs) {
  std::vector<FrontierRecord> out;
  for (size_t i = 0; i < rs.size(); ++i) {
    bool dom = false;
    for (size_t j = 0; j < rs.size() && !dom; ++j) {
      if (i == j) continue;
      bool geq = rs[j].utility >= rs[i].utility &&
                 rs[j].avg_privilege <= rs[i].avg_privilege;
      bool strict = rs[j].utility > rs[i].utility ||
                    rs[j].avg_privilege < rs[i].avg_privilege;
      if (geq && strict) dom = true;
    }
    if (!dom) out.push_back(rs[i]);
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.avg_privilege < b.avg_privilege;
  });
  return out;
}

}  // namespace

TEST_CASE("degradation surface: shape, range, counts") {
  Model m = surgered_model(3);
  auto ds = make_dataset(Task::BalancedBrackets, {1, 2, 3}, 25, 5, Split::Test);
  std::vector<int64_t> grid = {2, 4, 8};
  auto s = degradation_surface(m, ds, grid);
  REQUIRE(s.difficulties == std::vector<int>{1, 2, 3});
  REQUIRE(s.accuracy.size() == 3);
  for (const auto& row : s.accuracy) {
    REQUIRE(row.size() == grid.size());
    for (double a : row) {
      CHECK(a >= 0.0);
      CHECK(a <= 1.0);
    }
  }
  for (int64_t c : s.counts) CHECK(c == 25);
  for (bool f : s.low_sample) CHECK_FALSE(f);
}

TEST_CASE("single-difficulty dataset gives a one-row surface") {
  Model m = surgered_model(5);
  auto ds = make_dataset(Task::LengthComparison, {2}, 12, 6, Split::Test);
  auto s = degradation_surface(m, ds, {2, 8});
  CHECK(s.difficulties == std::vector<int>{2});
  CHECK(s.accuracy.size() == 1);
  CHECK(s.low_sample[0]);  // 12 < 20
}

TEST_CASE("full-rank column matches per-difficulty full-privilege utility") {
  Model m = surgered_model(7);
  auto ds = make_dataset(Task::BalancedBrackets, {1, 2}, 20, 8, Split::Test);
  std::vector<int64_t> grid = {2, 4, 8};
  auto s = degradation_surface(m, ds, grid);
  for (size_t i = 0; i < s.difficulties.size(); ++i) {
    Dataset level;
    level.split = ds.split;
    for (const auto& inst : ds.instances)
      if (inst.difficulty == s.difficulties[i]) level.instances.push_back(inst);
    PolicyConfig full;
    full.kind = PolicyKind::FullPrivilege;
    full.rank_grid = grid;
    double u = evaluate_policy(m, level, full).utility;
    CHECK(s.accuracy[i].back() == doctest::Approx(u).epsilon(1e-12));
  }
}

TEST_CASE("surface cells replay from direct per-instance recomputation") {
  Model m = surgered_model(9);
  auto ds = make_dataset(Task::ContainsSubstring, {1, 3}, 10, 9, Split::Test);
  std::vector<int64_t> grid = {4, 8};
  auto s = degradation_surface(m, ds, grid);
  for (size_t i = 0; i < s.difficulties.size(); ++i)
    for (size_t j = 0; j < grid.size(); ++j) {
      int64_t c = 0, n = 0;
      for (const auto& inst : ds.instances) {
        if (inst.difficulty != s.difficulties[i]) continue;
        c += m.predict_label(inst, ControlVector::global(grid[j])).label == inst.label;
        ++n;
      }
      CHECK(s.accuracy[i][j] ==
            doctest::Approx(static_cast<double>(c) / n).epsilon(1e-12));
    }
}

TEST_CASE("build_frontier: record count and target-independent baselines") {
  Model m = surgered_model(11);
  auto val = make_dataset(Task::BalancedBrackets, {1}, 10, 10, Split::Validation);
  auto test = make_dataset(Task::BalancedBrackets, {1}, 10, 10, Split::Test);
  std::vector<PolicyKind> kinds = {PolicyKind::FullPrivilege, PolicyKind::MinRank,
                                   PolicyKind::StaticLP};
  auto recs = build_frontier(m, val, test, kinds, {2, 4, 8});
  REQUIRE(recs.size() == kinds.size() * kDefaultTargets.size());
  // FullPrivilege rows identical across targets
  std::vector<FrontierRecord> fp;
  for (const auto& r : recs)
    if (r.kind == PolicyKind::FullPrivilege) fp.push_back(r);
  REQUIRE(fp.size() == 3);
  for (const auto& r : fp) {
    CHECK(r.utility == fp[0].utility);
    CHECK(r.avg_privilege == fp[0].avg_privilege);
  }
  // StaticLP privilege non-decreasing in target
  std::vector<double> slp;
  for (const auto& r : recs)
    if (r.kind == PolicyKind::StaticLP) slp.push_back(r.avg_privilege);
  CHECK(std::is_sorted(slp.begin(), slp.end()));
}

TEST_CASE("pareto: single record and the two-record domination example") {
  auto solo = pareto_filter({rec(0.5, 3.0)});
  REQUIRE(solo.size() == 1);
  auto pair = pareto_filter({rec(0.9, 10.0), rec(0.8, 12.0)});
  REQUIRE(pair.size() == 1);
  CHECK(pair[0].utility == 0.9);
  CHECK(pair[0].avg_privilege == 10.0);
}

TEST_CASE("pareto matches the brute-force oracle on random record sets") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<FrontierRecord> rs;
    int n = 1 + static_cast<int>(rng.uniform_int(0, 14));
    for (int i = 0; i < n; ++i)
      rs.push_back(rec(rng.uniform(), 2.0 + 30.0 * rng.uniform()));
    auto got = pareto_filter(rs);
    auto want = brute_pareto(rs);
    REQUIRE(got.size() == want.size());
    for (size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].utility == want[i].utility);
      CHECK(got[i].avg_privilege == want[i].avg_privilege);
    }
    // survivors are mutually non-dominated
    for (const auto& a : got)
      for (const auto& b : got) {
        bool geq = a.utility >= b.utility && a.avg_privilege <= b.avg_privilege;
        bool strict = a.utility > b.utility || a.avg_privilege < b.avg_privilege;
        bool dominated = geq && strict;
        CHECK_FALSE(dominated);
      }
  }
}

TEST_CASE("relative savings: identity, ratio example, undefined baseline") {
  FrontierRecord base = rec(0.50, 896.0);
  base.kind = PolicyKind::FullPrivilege;
  FrontierRecord slp = rec(0.45, 56.0);
  slp.kind = PolicyKind::StaticLP;
  auto rows = relative_savings({base, slp});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].utility_retention_pct == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(rows[0].privilege_reduction_pct == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(rows[1].utility_retention_pct == doctest::Approx(90.0).epsilon(1e-12));
  CHECK(rows[1].privilege_reduction_pct == doctest::Approx(6.25).epsilon(1e-12));

  FrontierRecord dead = rec(0.0, 8.0);
  dead.kind = PolicyKind::FullPrivilege;
  auto guarded = relative_savings({dead, slp});
  CHECK_FALSE(guarded[0].defined);
  CHECK_FALSE(guarded[1].defined);

  CHECK_THROWS_AS(relative_savings({slp}), ArgumentError);  // baseline missing
}

TEST_CASE("csv outputs carry one line per cell plus header") {
  Model m = surgered_model(13);
  auto ds = make_dataset(Task::BalancedBrackets, {1, 2}, 5, 12, Split::Test);
  auto s = degradation_surface(m, ds, {2, 8});
  std::string sc = surface_to_csv(s);
  CHECK(std::count(sc.begin(), sc.end(), '\n') == 1 + 2 * 2);
  CHECK(sc.rfind("difficulty,rank,accuracy,count,low_sample", 0) == 0);

  auto fc = frontier_to_csv({rec(0.9, 4.0)});
  CHECK(std::count(fc.begin(), fc.end(), '\n') == 2);
  CHECK(fc.rfind("policy,target,utility,avg_privilege,avg_passes,infeasible", 0) == 0);
}
