#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rvm {

// key=value text. Blank lines and lines starting with '#' are skipped; keys
// may repeat (values are kept in file order).
class KeyValues {
 public:
  static KeyValues parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValues load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::vector<std::string>& all(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> keys() const;

 private:
  std::string origin_;
  std::map<std::string, std::vector<std::string>> values_;
};

double parse_double(const std::string& text, const std::string& what);
std::size_t parse_size(const std::string& text, const std::string& what);

}  // namespace rvm
