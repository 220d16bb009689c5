#include "mixupe/config.hpp"

#include <fstream>
#include <sstream>

namespace mixupe {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_string(buf.str(), path);
}

KeyValueConfig KeyValueConfig::parse_string(const std::string& text,
                                            const std::string& origin) {
  KeyValueConfig cfg;
  cfg.origin_ = origin;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (!cfg.values_.emplace(key, value).second)
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": duplicate key '" + key + "'");
  }
  return cfg;
}

const std::string& KeyValueConfig::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end())
    throw ConfigError(origin_ + ": missing required key '" + key + "'");
  touched_.insert(key);
  return it->second;
}

bool KeyValueConfig::has(const std::string& key) const {
  return values_.count(key) != 0;
}

std::string KeyValueConfig::get_string(const std::string& key) const {
  return raw(key);
}

std::string KeyValueConfig::get_string(const std::string& key,
                                       const std::string& fallback) const {
  if (!has(key)) return fallback;
  return raw(key);
}

double KeyValueConfig::get_double(const std::string& key) const {
  const std::string& v = raw(key);
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": key '" + key + "' is not a number: '" + v +
                      "'");
  }
}

double KeyValueConfig::get_double(const std::string& key,
                                  double fallback) const {
  if (!has(key)) return fallback;
  return get_double(key);
}

std::int64_t KeyValueConfig::get_int(const std::string& key) const {
  const std::string& v = raw(key);
  try {
    std::size_t pos = 0;
    const long long i = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": key '" + key + "' is not an integer: '" +
                      v + "'");
  }
}

std::int64_t KeyValueConfig::get_int(const std::string& key,
                                     std::int64_t fallback) const {
  if (!has(key)) return fallback;
  return get_int(key);
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = raw(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(origin_ + ": key '" + key + "' is not a boolean: '" + v +
                    "'");
}

std::vector<double> KeyValueConfig::get_double_list(
    const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list(raw(key))) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError(origin_ + ": key '" + key +
                        "' has a non-numeric item '" + item + "'");
    }
  }
  if (out.empty())
    throw ConfigError(origin_ + ": key '" + key + "' has an empty list");
  return out;
}

std::vector<double> KeyValueConfig::get_double_list(
    const std::string& key, const std::vector<double>& fallback) const {
  if (!has(key)) return fallback;
  return get_double_list(key);
}

std::vector<std::uint64_t> KeyValueConfig::get_uint_list(
    const std::string& key,
    const std::vector<std::uint64_t>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(raw(key))) {
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError(origin_ + ": key '" + key +
                        "' has a non-integer item '" + item + "'");
    }
  }
  if (out.empty())
    throw ConfigError(origin_ + ": key '" + key + "' has an empty list");
  return out;
}

void KeyValueConfig::reject_unknown_keys() const {
  for (const auto& [key, value] : values_) {
    if (!touched_.count(key))
      throw ConfigError(origin_ + ": unknown key '" + key + "'");
  }
}

}  // namespace mixupe
