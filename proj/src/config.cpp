#include "rvm/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "rvm/error.hpp"

namespace rvm {

namespace {
std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}
}  // namespace

double parse_double(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(what + ": expected a number, got '" + text + "'");
  }
}

std::size_t parse_size(const std::string& text, const std::string& what) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end || text.empty())
    throw ConfigError(what + ": expected a non-negative integer, got '" + text + "'");
  return static_cast<std::size_t>(v);
}

KeyValues KeyValues::parse(const std::string& text, const std::string& origin) {
  KeyValues kv;
  kv.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" +
                        line + "'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    kv.values_[key].push_back(trim(line.substr(eq + 1)));
  }
  return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

const std::vector<std::string>& KeyValues::all(const std::string& key) const {
  static const std::vector<std::string> empty;
  const auto it = values_.find(key);
  return it == values_.end() ? empty : it->second;
}

std::string KeyValues::get(const std::string& key, const std::string& fallback) const {
  const auto& v = all(key);
  if (v.empty()) return fallback;
  if (v.size() > 1) throw ConfigError(origin_ + ": key '" + key + "' given more than once");
  return v.front();
}

double KeyValues::get_double(const std::string& key, double fallback) const {
  return has(key) ? parse_double(get(key, ""), origin_ + ": " + key) : fallback;
}

std::size_t KeyValues::get_size(const std::string& key, std::size_t fallback) const {
  return has(key) ? parse_size(get(key, ""), origin_ + ": " + key) : fallback;
}

std::uint64_t KeyValues::get_u64(const std::string& key, std::uint64_t fallback) const {
  return has(key) ? static_cast<std::uint64_t>(parse_size(get(key, ""), origin_ + ": " + key))
                  : fallback;
}

bool KeyValues::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get(key, "");
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(origin_ + ": " + key + ": expected true/false, got '" + v + "'");
}

std::vector<std::string> KeyValues::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_) out.push_back(k);
  return out;
}

}  // namespace rvm
