#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dropclass {

/// Flat `key = value` text shared by configs, manifests and checkpoint
/// headers. Lines starting with '#' are comments. Keys are kept sorted so
/// serialization is canonical.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text, const std::string& origin = "<text>");
  static KeyValues load(const std::filesystem::path& path);

  std::string serialize() const;

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  void set(const std::string& key, std::string value) { entries_[key] = std::move(value); }
  void set(const std::string& key, const char* value) { entries_[key] = value; }
  void set(const std::string& key, double value);
  void set(const std::string& key, std::int64_t value);
  void set(const std::string& key, int value) { set(key, static_cast<std::int64_t>(value)); }
  void set(const std::string& key, std::uint64_t value);
  void set(const std::string& key, bool value) { entries_[key] = value ? "true" : "false"; }
  void erase(const std::string& key) { entries_.erase(key); }

  std::optional<std::string> find(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::int64_t> get_int_list(const std::string& key, std::vector<std::int64_t> fallback) const;
  std::vector<double> get_double_list(const std::string& key) const;

  /// Entries whose key starts with `prefix`, with the prefix stripped.
  KeyValues with_prefix(const std::string& prefix) const;
  void merge(const KeyValues& other, const std::string& prefix = "");

  const std::map<std::string, std::string>& entries() const { return entries_; }
  bool operator==(const KeyValues&) const = default;

 private:
  std::map<std::string, std::string> entries_;
};

std::string format_double(double value);

}  // namespace dropclass
