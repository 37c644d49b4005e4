#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

// Tiny ordered key=value text format used by model configs, dataset
// manifests, and run records. Lines are `key=value`; blank lines and lines
// starting with '#' are ignored. Doubles round-trip exactly (17 significant
// digits).

namespace fscascade {

class KvMap {
 public:
  void set(const std::string& key, const std::string& value);
  void set_int(const std::string& key, int64_t value);
  void set_double(const std::string& key, double value);
  void set_doubles(const std::string& key, const std::vector<double>& values);

  bool has(const std::string& key) const;
  // Getters throw std::runtime_error naming the missing/malformed key.
  const std::string& get(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;

  const std::vector<std::string>& keys() const { return order_; }
  std::string serialize() const;
  static KvMap parse(const std::string& text);

 private:
  std::vector<std::string> order_;
  std::map<std::string, std::string> values_;
};

std::string format_double(double v);  // shortest exact form via %.17g

// For single-line records of space-separated `name=value` fields (detection
// dumps, annotation lines). Throws naming the field when absent/malformed.
double record_field_double(const std::string& line, const std::string& name);

KvMap read_kv_file(const std::string& path);
void write_kv_file(const std::string& path, const KvMap& kv);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace fscascade
