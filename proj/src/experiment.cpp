#include "lpn/experiment.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lpn/common.hpp"

namespace lpn {

std::string fmt_double(double v) {
  char buf[40];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw StateError("fmt_double: conversion failed");
  return std::string(buf, end);
}

void atomic_write_text(const std::string& path, const std::string& content) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc | std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + tmp);
    f << content;
    if (!f) throw IoError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename to " + path + " failed: " + ec.message());
}

CsvBuilder::CsvBuilder(std::vector<std::string> header) : n_cols_(header.size()) {
  for (size_t i = 0; i < header.size(); ++i) {
    if (i) text_ += ',';
    text_ += header[i];
  }
  text_ += '\n';
}

void CsvBuilder::row(const std::vector<std::string>& cells) {
  if (cells.size() != n_cols_)
    throw ArgumentError("csv row has " + std::to_string(cells.size()) +
                        " cells, header has " + std::to_string(n_cols_));
  for (size_t i = 0; i < cells.size(); ++i) {
    if (i) text_ += ',';
    text_ += cells[i];
  }
  text_ += '\n';
}

}  // namespace lpn
