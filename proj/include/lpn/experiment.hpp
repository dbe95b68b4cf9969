#pragma once

#include <string>
#include <vector>

namespace lpn {

// Shortest round-trip decimal rendering; identical input bits always produce
// identical text, which is what makes artifact reruns byte-comparable.
std::string fmt_double(double v);

// Write-then-rename so readers never observe a partial file.
void atomic_write_text(const std::string& path, const std::string& content);

class CsvBuilder {
 public:
  explicit CsvBuilder(std::vector<std::string> header);
  void row(const std::vector<std::string>& cells);
  const std::string& text() const { return text_; }
  void save(const std::string& path) const { atomic_write_text(path, text_); }

 private:
  size_t n_cols_;
  std::string text_;
};

}  // namespace lpn
