#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mixupe/errors.hpp"

namespace mixupe {

/**
 * Line-oriented `key = value` configuration. `#` starts a comment,
 * blank lines are skipped, keys are unique. Accessors record which keys
 * were read so unknown keys can be rejected after parsing.
 */
class KeyValueConfig {
 public:
  static KeyValueConfig parse_file(const std::string& path);
  static KeyValueConfig parse_string(const std::string& text,
                                     const std::string& origin = "<string>");

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key,
                         const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_double_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& fallback) const;
  std::vector<std::uint64_t> get_uint_list(const std::string& key,
                                           const std::vector<std::uint64_t>&
                                               fallback) const;

  /// Throws ConfigError naming any key that was never read.
  void reject_unknown_keys() const;
  const std::string& origin() const { return origin_; }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> touched_;
  std::string origin_;

  const std::string& raw(const std::string& key) const;
};

}  // namespace mixupe
