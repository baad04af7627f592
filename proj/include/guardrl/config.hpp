#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace guardrl {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class KeyType { integer, number, boolean, string };

struct KeySpec {
  std::string name;
  KeyType type;
  std::string default_value;
  std::string doc;
};

/// Flat key/value run configuration over a fixed key registry. Config files
/// are JSON; nested objects flatten to dotted keys ({"grpo": {"iterations": 5}}
/// sets grpo.iterations). Unknown keys and mistyped values are rejected.
class RunConfig {
 public:
  RunConfig();

  static const std::vector<KeySpec>& registry();
  static const KeySpec& spec(std::string_view key);

  /// Merges a JSON file over the current values.
  void load_file(const std::filesystem::path& path);
  void merge_json(std::string_view text);
  /// `key=value`; value is parsed according to the key's type.
  void apply_override(std::string_view assignment);
  void set(std::string_view key, std::string_view value);

  std::int64_t get_int(std::string_view key) const;
  std::uint64_t get_uint(std::string_view key) const;
  double get_double(std::string_view key) const;
  bool get_bool(std::string_view key) const;
  const std::string& get_string(std::string_view key) const;
  std::vector<std::string> get_list(std::string_view key) const;

  /// Canonical JSON of every value; identical configs give identical text.
  std::string to_json() const;
  /// One line per key: name, type, default, doc.
  static std::string help_text();

 private:
  const KeySpec& checked(std::string_view key, KeyType expected) const;
  /// Canonical text of each value: integers and numbers in JSON form,
  /// booleans as true/false, strings verbatim.
  std::map<std::string, std::string, std::less<>> values_;
};

}  // namespace guardrl
