#pragma once
// Flat key=value run configuration with [section] headers and `include`
// directives. Keys are addressed as "section.key".
#include <map>
#include <string>
#include <vector>

namespace milreg {

class Config {
 public:
  Config() = default;

  // Later assignments win; includes are inlined where they appear.
  void load_file(const std::string& path);
  void set(const std::string& dotted_key, const std::string& value);
  void apply_override(const std::string& key_equals_value);

  bool has(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  std::string require(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Effective configuration, stable order, printable as a config file.
  std::string render() const;
  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace milreg
