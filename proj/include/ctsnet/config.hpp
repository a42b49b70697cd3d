#pragma once

// Flat key=value text config. Lines are `key = value`; '#' starts a comment.

#include <map>
#include <string>

namespace ctsnet {

class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(const std::string& text);
  static KeyValueConfig parse_file(const std::string& path);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& dflt) const;
  int64_t get_int(const std::string& key, int64_t dflt) const;
  double get_double(const std::string& key, double dflt) const;
  bool get_bool(const std::string& key, bool dflt) const;

  void set(const std::string& key, const std::string& value);
  void set_int(const std::string& key, int64_t value);
  void set_double(const std::string& key, double value);
  void set_bool(const std::string& key, bool value);

  // Keys in lexicographic order; parse(serialize(c)) == c.
  std::string serialize() const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace ctsnet
