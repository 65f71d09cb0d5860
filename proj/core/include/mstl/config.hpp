#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mstl {

// Flat "key = value" text with optional [section] headers. '#' and ';' start
// comments at the beginning of a line. Keys before the first header belong to
// the "" section.
class ConfigFile {
 public:
  static ConfigFile parse(std::string_view text);  // ConfigError with line number
  static ConfigFile load(const std::filesystem::path& path);  // IoError when unreadable

  bool has_section(const std::string& section) const { return sections_.count(section) != 0; }
  std::optional<std::string> get(const std::string& section, const std::string& key) const;
  void set(const std::string& section, const std::string& key, std::string value);
  // Keys of a section, sorted.
  std::vector<std::string> keys(const std::string& section) const;

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

// Value conversions; ConfigError names the key on failure.
double parse_double(std::string_view key, std::string_view value);
std::int64_t parse_int(std::string_view key, std::string_view value);
std::uint64_t parse_u64(std::string_view key, std::string_view value);
bool parse_bool(std::string_view key, std::string_view value);
std::vector<int> parse_int_list(std::string_view key, std::string_view value);

}  // namespace mstl
