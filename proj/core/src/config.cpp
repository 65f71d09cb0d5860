#include "mstl/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "mstl/errors.hpp"

namespace mstl {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError("key '" + std::string(key) + "': expected " + std::string(expected) + ", got '" +
                    std::string(value) + "'");
}

}  // namespace

ConfigFile ConfigFile::parse(std::string_view text) {
  ConfigFile cfg;
  std::string section;
  cfg.sections_[section];
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (section.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty section name");
      cfg.sections_[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    auto& entries = cfg.sections_[section];
    if (entries.count(key)) {
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    entries[key] = std::string(trim(line.substr(eq + 1)));
  }
  return cfg;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::optional<std::string> ConfigFile::get(const std::string& section, const std::string& key) const {
  const auto s = sections_.find(section);
  if (s == sections_.end()) return std::nullopt;
  const auto k = s->second.find(key);
  if (k == s->second.end()) return std::nullopt;
  return k->second;
}

void ConfigFile::set(const std::string& section, const std::string& key, std::string value) {
  sections_[section][key] = std::move(value);
}

std::vector<std::string> ConfigFile::keys(const std::string& section) const {
  std::vector<std::string> out;
  const auto s = sections_.find(section);
  if (s == sections_.end()) return out;
  for (const auto& [k, v] : s->second) out.push_back(k);
  return out;
}

double parse_double(std::string_view key, std::string_view value) {
  try {
    std::size_t used = 0;
    const std::string s(value);
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  bad_value(key, value, "a real number");
}

std::int64_t parse_int(std::string_view key, std::string_view value) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty()) bad_value(key, value, "an integer");
  return v;
}

std::uint64_t parse_u64(std::string_view key, std::string_view value) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty()) {
    bad_value(key, value, "a nonnegative integer");
  }
  return v;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  bad_value(key, value, "true or false");
}

std::vector<int> parse_int_list(std::string_view key, std::string_view value) {
  std::vector<int> out;
  if (trim(value).empty()) return out;
  std::size_t start = 0;
  while (start <= value.size()) {
    const auto comma = value.find(',', start);
    const auto piece = trim(value.substr(start, comma == std::string_view::npos ? value.size() - start : comma - start));
    out.push_back(static_cast<int>(parse_int(key, piece)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace mstl
