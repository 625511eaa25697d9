#include "dropclass/keyvalue.hpp"

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "dropclass/errors.hpp"
#include "dropclass/tensor_io.hpp"

namespace dropclass {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* type) {
  throw FormatError("config", "key '" + key + "' has value '" + value + "', expected " + type);
}

}  // namespace

std::string format_double(double value) {
  // 17 significant digits round-trip every double.
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

KeyValues KeyValues::parse(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw FormatError("config", origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw FormatError("config", origin + ":" + std::to_string(lineno) + ": empty key");
    kv.entries_[key] = trim(t.substr(eq + 1));
  }
  return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) { return parse(read_file(path), path.string()); }

std::string KeyValues::serialize() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
  return out;
}

void KeyValues::set(const std::string& key, double value) { entries_[key] = format_double(value); }
void KeyValues::set(const std::string& key, std::int64_t value) { entries_[key] = std::to_string(value); }
void KeyValues::set(const std::string& key, std::uint64_t value) { entries_[key] = std::to_string(value); }

std::optional<std::string> KeyValues::find(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::string KeyValues::get_string(const std::string& key) const {
  auto v = find(key);
  if (!v) throw FormatError("config", "missing key '" + key + "'");
  return *v;
}

std::string KeyValues::get_string(const std::string& key, const std::string& fallback) const {
  return find(key).value_or(fallback);
}

double KeyValues::get_double(const std::string& key) const {
  const std::string v = get_string(key);
  char* end = nullptr;
  errno = 0;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || errno == ERANGE) bad_value(key, v, "a number");
  return d;
}

double KeyValues::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

std::int64_t KeyValues::get_int(const std::string& key) const {
  const std::string v = get_string(key);
  std::int64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

std::int64_t KeyValues::get_int(const std::string& key, std::int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}

std::uint64_t KeyValues::get_uint(const std::string& key, std::uint64_t fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get_string(key);
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "an unsigned integer");
  return out;
}

bool KeyValues::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get_string(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(key, v, "a boolean");
}

std::vector<std::int64_t> KeyValues::get_int_list(const std::string& key, std::vector<std::int64_t> fallback) const {
  if (!has(key)) return fallback;
  std::vector<std::int64_t> out;
  std::istringstream in(get_string(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    KeyValues one;
    one.set("v", trim(item));
    try {
      out.push_back(one.get_int("v"));
    } catch (const FormatError&) {
      bad_value(key, get_string(key), "a comma-separated integer list");
    }
  }
  return out;
}

std::vector<double> KeyValues::get_double_list(const std::string& key) const {
  std::vector<double> out;
  std::istringstream in(get_string(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    KeyValues one;
    one.set("v", trim(item));
    try {
      out.push_back(one.get_double("v"));
    } catch (const FormatError&) {
      bad_value(key, get_string(key), "a comma-separated number list");
    }
  }
  return out;
}

KeyValues KeyValues::with_prefix(const std::string& prefix) const {
  KeyValues out;
  for (const auto& [k, v] : entries_) {
    if (k.rfind(prefix, 0) == 0) out.entries_[k.substr(prefix.size())] = v;
  }
  return out;
}

void KeyValues::merge(const KeyValues& other, const std::string& prefix) {
  for (const auto& [k, v] : other.entries_) entries_[prefix + k] = v;
}

}  // namespace dropclass
