#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace soat::util {

// Flat `key = value` configuration with CLI override precedence. Consumers
// declare the keys they understand; anything left over is rejected so typos
// fail loudly instead of silently using a default.
class KvConfig {
 public:
  KvConfig() = default;

  static KvConfig from_file(const std::string& path);
  static KvConfig from_string(const std::string& text);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback);
  int get_int(const std::string& key, int fallback);
  long long get_long(const std::string& key, long long fallback);
  uint64_t get_u64(const std::string& key, uint64_t fallback);
  double get_double(const std::string& key, double fallback);
  bool get_bool(const std::string& key, bool fallback);

  // Copies every key from `other` (overwriting duplicates).
  void merge(const KvConfig& other);

  // Throws ConfigError listing keys that were set but never read.
  void reject_unknown_keys() const;

  // Fully-resolved `key = value` lines, sorted by key.
  std::string echo() const;

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
};

}  // namespace soat::util
