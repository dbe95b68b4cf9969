#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <set>
#include <string>

#include "lpn/common.hpp"
#include "lpn/taskgen.hpp"

using namespace lpn;

namespace {

// --- independent label oracles, operating on the rendered prompt text ---

bool oracle_brackets(const std::string& prompt) {
  std::string s = prompt.substr(0, prompt.size() - 7);  // strip " = True"
  std::vector<char> stack;
  for (char c : s) {
    if (c == '(') stack.push_back(')');
    else if (c == '[') stack.push_back(']');
    else if (c == '{') stack.push_back('}');
    else {
      if (stack.empty() || stack.back() != c) return false;
      stack.pop_back();
    }
  }
  return stack.empty();
}

bool oracle_length(const std::string& prompt) {
  size_t p1 = prompt.find("len(");
  size_t e1 = prompt.find(')', p1);
  size_t p2 = prompt.find("len(", e1);
  size_t e2 = prompt.find(')', p2);
  std::string s1 = prompt.substr(p1 + 4, e1 - p1 - 4);
  std::string s2 = prompt.substr(p2 + 4, e2 - p2 - 4);
  return s1.size() > s2.size();
}

bool oracle_substring(const std::string& prompt) {
  size_t c = prompt.find(" contains '");
  std::string hay = prompt.substr(0, c);
  size_t q1 = c + 11;
  size_t q2 = prompt.find('\'', q1);
  std::string pat = prompt.substr(q1, q2 - q1);
  // naive scan
  if (pat.size() > hay.size()) return false;
  for (size_t i = 0; i + pat.size() <= hay.size(); ++i) {
    bool match = true;
    for (size_t j = 0; j < pat.size(); ++j)
      if (hay[i + j] != pat[j]) { match = false; break; }
    if (match) return true;
  }
  return false;
}

bool oracle(const TaskInstance& inst) {
  switch (inst.task) {
    case Task::BalancedBrackets: return oracle_brackets(inst.prompt);
    case Task::LengthComparison: return oracle_length(inst.prompt);
    case Task::ContainsSubstring: return oracle_substring(inst.prompt);
  }
  return false;
}

}  // namespace

TEST_CASE("paper table rows check out under the oracles") {
  CHECK(oracle_brackets("[] = True"));
  CHECK(oracle_brackets("{}([()[[{}]]]) = True"));
  CHECK_FALSE(oracle_length("len(ghgh) > len(gfbe) = True"));
  CHECK(oracle_substring("eabade contains 'aba' = True"));
}

TEST_CASE("label soundness: generated labels match independent oracles") {
  for (Task task : kAllTasks) {
    for (int difficulty = 1; difficulty <= 5; ++difficulty) {
      Rng rng(1000 + difficulty);
      for (int i = 0; i < 2000; ++i) {
        auto inst = gen_instance(task, difficulty, rng);
        CHECK(inst.label == oracle(inst));
        CHECK(inst.difficulty == difficulty);
      }
    }
  }
}

TEST_CASE("difficulty 1 brackets can draw the minimal pair") {
  Rng rng(7);
  bool saw_minimal = false;
  for (int i = 0; i < 500 && !saw_minimal; ++i) {
    auto inst = gen_balanced_brackets(1, rng);
    if (inst.prompt == "[] = True") {
      saw_minimal = true;
      CHECK(inst.label);
    }
  }
  CHECK(saw_minimal);
}

TEST_CASE("substring: haystack equal to pattern is positive") {
  CHECK(oracle_substring("aba contains 'aba' = True"));
}

TEST_CASE("forced-label generation honors the label") {
  Rng rng(3);
  for (Task task : kAllTasks)
    for (bool want : {true, false})
      for (int i = 0; i < 200; ++i) {
        auto inst = gen_instance_with_label(task, 3, want, rng);
        CHECK(inst.label == want);
        CHECK(oracle(inst) == want);
      }
}

TEST_CASE("mean prompt length strictly increases with difficulty") {
  for (Task task : kAllTasks) {
    double prev = 0.0;
    for (int difficulty = 1; difficulty <= 6; ++difficulty) {
      Rng rng(42);
      double total = 0.0;
      for (int i = 0; i < 2000; ++i)
        total += static_cast<double>(gen_instance(task, difficulty, rng).prompt.size());
      double mean = total / 2000.0;
      CHECK(mean > prev);
      prev = mean;
    }
  }
}

TEST_CASE("make_dataset: determinism, counts, balance") {
  auto a = make_dataset(Task::BalancedBrackets, {1, 2, 3, 4, 5}, 100, 9, Split::Train);
  auto b = make_dataset(Task::BalancedBrackets, {1, 2, 3, 4, 5}, 100, 9, Split::Train);
  CHECK(a.instances.size() == 500);
  REQUIRE(a.instances.size() == b.instances.size());
  for (size_t i = 0; i < a.instances.size(); ++i)
    CHECK(a.instances[i].prompt == b.instances[i].prompt);

  std::map<int, int> positives, counts;
  for (const auto& inst : a.instances) {
    counts[inst.difficulty]++;
    if (inst.label) positives[inst.difficulty]++;
  }
  for (auto& [level, n] : counts) {
    CHECK(n == 100);
    double frac = static_cast<double>(positives[level]) / n;
    CHECK(frac >= 0.45);
    CHECK(frac <= 0.55);
  }
}

TEST_CASE("splits are disjoint as prompt strings across seeds") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    auto splits = make_splits(Task::ContainsSubstring, {1, 2, 3}, 40, 20, 20, seed);
    std::set<std::string> train, val, test;
    for (const auto& i : splits.train.instances) train.insert(i.prompt);
    for (const auto& i : splits.validation.instances) val.insert(i.prompt);
    for (const auto& i : splits.test.instances) test.insert(i.prompt);
    for (const auto& p : val) CHECK(train.count(p) == 0);
    for (const auto& p : test) {
      CHECK(train.count(p) == 0);
      CHECK(val.count(p) == 0);
    }
  }
}

TEST_CASE("tokenizer round-trips the table prompts") {
  const auto& tok = Tokenizer::get();
  for (const std::string p :
       {"[] = True", "{}([()[[{}]]]) = True", "len(ghgh) > len(gfbe) = True",
        "eabade contains 'aba' = True"}) {
    CHECK(tok.decode(tok.encode(p)) == p);
  }
}

TEST_CASE("tokenizer basics") {
  const auto& tok = Tokenizer::get();
  CHECK(tok.encode("[]").size() == 2);
  CHECK(tok.vocab_size() == 26 + 10 + 11 + 4);
  CHECK(tok.true_id() < tok.vocab_size());
  CHECK(tok.refuse_id() == tok.vocab_size() - 1);
  CHECK_THROWS_AS(tok.encode("hello!"), EncodingError);
}

TEST_CASE("jsonl round trip") {
  auto ds = make_dataset(Task::LengthComparison, {1, 2}, 10, 5, Split::Test);
  std::string path = "taskgen_test_tmp.jsonl";
  write_jsonl(ds, path);
  auto back = read_jsonl(path);
  REQUIRE(back.instances.size() == ds.instances.size());
  for (size_t i = 0; i < ds.instances.size(); ++i) {
    CHECK(back.instances[i].prompt == ds.instances[i].prompt);
    CHECK(back.instances[i].label == ds.instances[i].label);
    CHECK(back.instances[i].difficulty == ds.instances[i].difficulty);
  }
  CHECK(back.split == Split::Test);
  std::remove(path.c_str());
}
