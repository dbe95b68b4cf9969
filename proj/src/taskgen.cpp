#include "lpn/taskgen.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>

namespace lpn {

namespace {

bool brackets_balanced(const std::string& s) {
  std::vector<char> stack;
  for (char c : s) {
    switch (c) {
      case '(': stack.push_back(')'); break;
      case '[': stack.push_back(']'); break;
      case '{': stack.push_back('}'); break;
      case ')':
      case ']':
      case '}':
        if (stack.empty() || stack.back() != c) return false;
        stack.pop_back();
        break;
      default: return false;
    }
  }
  return stack.empty();
}

const char kOpen[3] = {'(', '[', '{'};
const char kClose[3] = {')', ']', '}'};
const std::string kBracketChars = "()[]{}";

std::string gen_balanced_string(int pairs, int max_depth, Rng& rng) {
  std::string out;
  std::vector<char> stack;
  int opens_left = pairs;
  while (opens_left > 0 || !stack.empty()) {
    bool can_open = opens_left > 0 && static_cast<int>(stack.size()) < max_depth;
    bool can_close = !stack.empty();
    if (can_open && (!can_close || rng.coin())) {
      int t = static_cast<int>(rng.uniform_int(0, 2));
      out.push_back(kOpen[t]);
      stack.push_back(kClose[t]);
      --opens_left;
    } else {
      out.push_back(stack.back());
      stack.pop_back();
    }
  }
  return out;
}

// Single corruption of a balanced string: swap, delete or replace; retried
// until the result is actually unbalanced.
std::string corrupt_balanced(const std::string& balanced, Rng& rng) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    std::string s = balanced;
    int kind = static_cast<int>(rng.uniform_int(0, 2));
    int64_t n = static_cast<int64_t>(s.size());
    if (kind == 0 && n >= 2) {
      int64_t i = rng.uniform_int(0, n - 1);
      int64_t j = rng.uniform_int(0, n - 1);
      std::swap(s[i], s[j]);
    } else if (kind == 1 && n >= 2) {
      s.erase(s.begin() + rng.uniform_int(0, n - 1));
    } else {
      int64_t i = rng.uniform_int(0, n - 1);
      s[i] = kBracketChars[rng.uniform_int(0, 5)];
    }
    if (s != balanced && !brackets_balanced(s)) return s;
  }
  return balanced.substr(0, balanced.size() - 1);  // drop closer: unbalanced
}

std::string random_word(int len, Rng& rng) {
  std::string s(len, 'a');
  for (char& c : s) c = static_cast<char>('a' + rng.uniform_int(0, 7));
  return s;
}

std::string substring_pattern(int difficulty) {
  int len = 3 + (difficulty - 1) / 2;
  std::string p(len, 'a');
  for (int i = 0; i < len; ++i) p[i] = (i % 2 == 0) ? 'a' : 'b';
  return p;
}

TaskInstance gen_brackets_with_label(int difficulty, bool label, Rng& rng) {
  int pairs = static_cast<int>(rng.uniform_int(difficulty, 2 * difficulty + 2));
  std::string s = gen_balanced_string(pairs, difficulty, rng);
  if (!label) s = corrupt_balanced(s, rng);
  return {Task::BalancedBrackets, s + " = True", label, difficulty};
}

TaskInstance gen_length_with_label(int difficulty, bool label, Rng& rng) {
  int base = 4 * difficulty;
  int len1, len2;
  if (label) {  // |s1| > |s2|
    len1 = base + static_cast<int>(rng.uniform_int(0, 2));
    len2 = len1 - 1 - static_cast<int>(rng.uniform_int(0, std::min(2, len1 - 2)));
  } else {  // |s1| <= |s2|, equality allowed
    len2 = base + static_cast<int>(rng.uniform_int(0, 2));
    len1 = len2 - static_cast<int>(rng.uniform_int(0, 2));
  }
  std::string s1 = random_word(len1, rng);
  std::string s2 = random_word(len2, rng);
  return {Task::LengthComparison, "len(" + s1 + ") > len(" + s2 + ") = True", label,
          difficulty};
}

TaskInstance gen_substring_with_label(int difficulty, bool label, Rng& rng) {
  std::string pat = substring_pattern(difficulty);
  int hay_len = std::max(5 * difficulty, static_cast<int>(pat.size()));
  std::string hay;
  if (label) {
    std::string rest = random_word(hay_len - static_cast<int>(pat.size()), rng);
    int64_t pos = rng.uniform_int(0, static_cast<int64_t>(rest.size()));
    hay = rest.substr(0, pos) + pat + rest.substr(pos);
  } else {
    do {
      hay = random_word(hay_len, rng);
    } while (hay.find(pat) != std::string::npos);
  }
  return {Task::ContainsSubstring, hay + " contains '" + pat + "' = True", label,
          difficulty};
}

}  // namespace

std::string task_name(Task t) {
  switch (t) {
    case Task::BalancedBrackets: return "balanced_brackets";
    case Task::LengthComparison: return "length_comparison";
    case Task::ContainsSubstring: return "contains_substring";
  }
  throw ArgumentError("unknown task");
}

Task task_from_name(const std::string& name) {
  for (Task t : kAllTasks)
    if (task_name(t) == name) return t;
  throw ArgumentError("unknown task name: " + name);
}

std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  throw ArgumentError("unknown split");
}

Tokenizer::Tokenizer() {
  for (char c = 'a'; c <= 'z'; ++c) alphabet_.push_back(c);
  for (char c = '0'; c <= '9'; ++c) alphabet_.push_back(c);
  alphabet_ += "()[]{} >='T";  // 'T' appears in the "= True" template
  std::fill(std::begin(char_to_id_), std::end(char_to_id_), -1);
  for (size_t i = 0; i < alphabet_.size(); ++i)
    char_to_id_[static_cast<unsigned char>(alphabet_[i])] = static_cast<int>(i);
}

const Tokenizer& Tokenizer::get() {
  static Tokenizer tok;
  return tok;
}

std::vector<int> Tokenizer::encode(const std::string& prompt) const {
  std::vector<int> ids;
  ids.reserve(prompt.size());
  for (char c : prompt) {
    int id = char_to_id_[static_cast<unsigned char>(c)];
    if (id < 0)
      throw EncodingError(std::string("character '") + c + "' is not in the task alphabet");
    ids.push_back(id);
  }
  return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= vocab_size())
      throw EncodingError("token id " + std::to_string(id) + " out of range");
    if (id >= static_cast<int>(alphabet_.size())) {
      static const char* kReserved[4] = {"<TRUE>", "<FALSE>", "<MODE>", "<REFUSE>"};
      out += kReserved[id - static_cast<int>(alphabet_.size())];
    } else {
      out.push_back(alphabet_[id]);
    }
  }
  return out;
}

TaskInstance gen_instance_with_label(Task task, int difficulty, bool label, Rng& rng) {
  if (difficulty < 1) throw ArgumentError("difficulty must be >= 1");
  switch (task) {
    case Task::BalancedBrackets: return gen_brackets_with_label(difficulty, label, rng);
    case Task::LengthComparison: return gen_length_with_label(difficulty, label, rng);
    case Task::ContainsSubstring: return gen_substring_with_label(difficulty, label, rng);
  }
  throw ArgumentError("unknown task");
}

TaskInstance gen_balanced_brackets(int difficulty, Rng& rng) {
  return gen_instance_with_label(Task::BalancedBrackets, difficulty, rng.coin(), rng);
}

TaskInstance gen_length_comparison(int difficulty, Rng& rng) {
  return gen_instance_with_label(Task::LengthComparison, difficulty, rng.coin(), rng);
}

TaskInstance gen_contains_substring(int difficulty, Rng& rng) {
  return gen_instance_with_label(Task::ContainsSubstring, difficulty, rng.coin(), rng);
}

TaskInstance gen_instance(Task task, int difficulty, Rng& rng) {
  return gen_instance_with_label(task, difficulty, rng.coin(), rng);
}

Dataset make_dataset(Task task, const std::vector<int>& levels, int n_per_level,
                     uint64_t seed, Split split, const std::set<std::string>* exclude) {
  if (levels.empty()) throw ArgumentError("make_dataset: levels must be non-empty");
  Dataset ds;
  ds.split = split;
  ds.seed = seed;
  Rng stream = Rng(seed).fork(0x5eedULL + static_cast<uint64_t>(split) * 7919ULL +
                              static_cast<uint64_t>(task) * 104729ULL);
  for (int level : levels) {
    Rng rng = stream.fork(static_cast<uint64_t>(level));
    for (int i = 0; i < n_per_level; ++i) {
      bool label = (i % 2 == 0);  // exact balance by construction
      TaskInstance inst;
      int tries = 0;
      do {
        inst = gen_instance_with_label(task, level, label, rng);
      } while (exclude && exclude->count(inst.prompt) && ++tries < 1000);
      ds.instances.push_back(std::move(inst));
    }
  }
  // deterministic shuffle so labels are not position-coded
  Rng shuffle_rng = stream.fork(0xabcdULL);
  for (size_t i = ds.instances.size(); i > 1; --i)
    std::swap(ds.instances[i - 1],
              ds.instances[shuffle_rng.uniform_int(0, static_cast<int64_t>(i) - 1)]);
  return ds;
}

SplitSet make_splits(Task task, const std::vector<int>& levels, int n_train, int n_val,
                     int n_test, uint64_t seed) {
  SplitSet out;
  out.train = make_dataset(task, levels, n_train, seed, Split::Train);
  std::set<std::string> seen;
  for (const auto& inst : out.train.instances) seen.insert(inst.prompt);
  out.validation = make_dataset(task, levels, n_val, seed, Split::Validation, &seen);
  for (const auto& inst : out.validation.instances) seen.insert(inst.prompt);
  out.test = make_dataset(task, levels, n_test, seed, Split::Test, &seen);
  return out;
}

void write_jsonl(const Dataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  for (const auto& inst : ds.instances) {
    nlohmann::json j;
    j["task"] = task_name(inst.task);
    j["difficulty"] = inst.difficulty;
    j["prompt"] = inst.prompt;
    j["label"] = inst.label;
    j["split"] = split_name(ds.split);
    f << j.dump() << "\n";
  }
  if (!f) throw IoError("write failed: " + path);
}

Dataset read_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  Dataset ds;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    TaskInstance inst;
    inst.task = task_from_name(j.at("task").get<std::string>());
    inst.difficulty = j.at("difficulty").get<int>();
    inst.prompt = j.at("prompt").get<std::string>();
    inst.label = j.at("label").get<bool>();
    ds.instances.push_back(std::move(inst));
    std::string sp = j.at("split").get<std::string>();
    for (Split s : {Split::Train, Split::Validation, Split::Test})
      if (split_name(s) == sp) ds.split = s;
  }
  return ds;
}

}  // namespace lpn
