#include "fscascade/textkv.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fscascade {

void KvMap::set(const std::string& key, const std::string& value) {
  if (!values_.count(key)) order_.push_back(key);
  values_[key] = value;
}

void KvMap::set_int(const std::string& key, int64_t value) {
  set(key, std::to_string(value));
}

void KvMap::set_double(const std::string& key, double value) {
  set(key, format_double(value));
}

void KvMap::set_doubles(const std::string& key,
                        const std::vector<double>& values) {
  std::string s;
  for (size_t i = 0; i < values.size(); ++i) {
    if (i) s += ",";
    s += format_double(values[i]);
  }
  set(key, s);
}

bool KvMap::has(const std::string& key) const { return values_.count(key) != 0; }

const std::string& KvMap::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::runtime_error("missing key: " + key);
  return it->second;
}

int64_t KvMap::get_int(const std::string& key) const {
  const std::string& s = get(key);
  size_t pos = 0;
  int64_t v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty()) {
    throw std::runtime_error("key " + key + " is not an integer: '" + s + "'");
  }
  return v;
}

double KvMap::get_double(const std::string& key) const {
  const std::string& s = get(key);
  size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty()) {
    throw std::runtime_error("key " + key + " is not a number: '" + s + "'");
  }
  return v;
}

std::vector<double> KvMap::get_doubles(const std::string& key) const {
  const std::string& s = get(key);
  std::vector<double> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || item.empty()) {
      throw std::runtime_error("key " + key + " has a bad number: '" + item +
                               "'");
    }
    out.push_back(v);
  }
  return out;
}

std::string KvMap::serialize() const {
  std::string out;
  for (const std::string& key : order_) {
    out += key;
    out += "=";
    out += values_.at(key);
    out += "\n";
  }
  return out;
}

KvMap KvMap::parse(const std::string& text) {
  KvMap kv;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("bad key=value line: '" + line + "'");
    }
    kv.set(line.substr(0, eq), line.substr(eq + 1));
  }
  return kv;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double record_field_double(const std::string& line, const std::string& name) {
  const std::string key = name + "=";
  size_t pos = line.find(key);
  while (pos != std::string::npos && pos != 0 && line[pos - 1] != ' ') {
    pos = line.find(key, pos + 1);
  }
  if (pos == std::string::npos) {
    throw std::runtime_error("record missing field '" + name + "': " + line);
  }
  const size_t start = pos + key.size();
  const size_t end = line.find(' ', start);
  const std::string value =
      line.substr(start, end == std::string::npos ? end : end - start);
  size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size() || value.empty()) {
    throw std::runtime_error("record field '" + name + "' is not a number: " +
                             line);
  }
  return v;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

KvMap read_kv_file(const std::string& path) {
  try {
    return KvMap::parse(read_text_file(path));
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

void write_kv_file(const std::string& path, const KvMap& kv) {
  write_text_file(path, kv.serialize());
}

}  // namespace fscascade
