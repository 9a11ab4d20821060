#pragma once

#include <cstdio>
#include <string>
#include <vector>

namespace soat::util {

// Shortest round-trippable decimal form; reloading reproduces the exact bits.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Fixed human-facing form for logs and reports.
inline std::string format_metric(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::vector<std::string> split_ws(const std::string& line);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
bool files_byte_identical(const std::string& a, const std::string& b);

}  // namespace soat::util
