#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "lpn/common.hpp"

namespace lpn {

enum class Task { BalancedBrackets, LengthComparison, ContainsSubstring };

std::string task_name(Task t);
Task task_from_name(const std::string& name);
inline const std::vector<Task> kAllTasks = {
    Task::BalancedBrackets, Task::LengthComparison, Task::ContainsSubstring};

struct TaskInstance {
  Task task;
  std::string prompt;
  bool label;
  int difficulty;
};

enum class Split { Train, Validation, Test };
std::string split_name(Split s);

struct Dataset {
  std::vector<TaskInstance> instances;
  Split split = Split::Train;
  uint64_t seed = 0;
};

// Character-level tokenizer over the fixed task alphabet plus four reserved
// tokens: the two answer tokens, the MODE prefix and the REFUSE answer.
class Tokenizer {
 public:
  static const Tokenizer& get();

  int vocab_size() const { return static_cast<int>(alphabet_.size()) + 4; }
  std::vector<int> encode(const std::string& prompt) const;
  std::string decode(const std::vector<int>& ids) const;

  int true_id() const { return static_cast<int>(alphabet_.size()); }
  int false_id() const { return true_id() + 1; }
  int mode_id() const { return true_id() + 2; }
  int refuse_id() const { return true_id() + 3; }

 private:
  Tokenizer();
  std::string alphabet_;
  int char_to_id_[256];
};

TaskInstance gen_balanced_brackets(int difficulty, Rng& rng);
TaskInstance gen_length_comparison(int difficulty, Rng& rng);
TaskInstance gen_contains_substring(int difficulty, Rng& rng);
TaskInstance gen_instance(Task task, int difficulty, Rng& rng);
// Forced-label variant used to balance datasets by construction.
TaskInstance gen_instance_with_label(Task task, int difficulty, bool label, Rng& rng);

Dataset make_dataset(Task task, const std::vector<int>& levels, int n_per_level,
                     uint64_t seed, Split split,
                     const std::set<std::string>* exclude = nullptr);

struct SplitSet {
  Dataset train;
  Dataset validation;
  Dataset test;
};

// Three splits from disjoint seed streams, later splits rejecting any prompt
// string already used by an earlier one.
SplitSet make_splits(Task task, const std::vector<int>& levels, int n_train,
                     int n_val, int n_test, uint64_t seed);

void write_jsonl(const Dataset& ds, const std::string& path);
Dataset read_jsonl(const std::string& path);

}  // namespace lpn
