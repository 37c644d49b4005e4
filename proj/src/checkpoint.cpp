#include "fscascade/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fscascade {

namespace {

constexpr char kMagic[8] = {'F', 'S', 'C', 'K', 'P', 'T', '0', '1'};

void write_i64(std::ofstream& out, int64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

int64_t read_i64(std::ifstream& in, const std::string& path) {
  int64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  return v;
}

void read_doubles(std::ifstream& in, std::vector<double>& v, size_t n,
                  const std::string& path) {
  v.resize(n);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_i64(out, static_cast<int64_t>(params.names().size()));
  for (const std::string& name : params.names()) {
    const Parameter& p = params.at(name);
    write_i64(out, static_cast<int64_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_i64(out, static_cast<int64_t>(p.tensor->shape.size()));
    for (int64_t d : p.tensor->shape) write_i64(out, d);
    out.write(reinterpret_cast<const char*>(p.tensor->value.data()),
              static_cast<std::streamsize>(p.tensor->value.size() *
                                           sizeof(double)));
    out.write(reinterpret_cast<const char*>(p.momentum.data()),
              static_cast<std::streamsize>(p.momentum.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void load_checkpoint(const std::string& path, ParamStore& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path);
  }
  const int64_t count = read_i64(in, path);
  if (count != static_cast<int64_t>(params.names().size())) {
    throw std::runtime_error(path + ": has " + std::to_string(count) +
                             " parameters, model expects " +
                             std::to_string(params.names().size()));
  }
  for (int64_t i = 0; i < count; ++i) {
    const int64_t name_len = read_i64(in, path);
    if (name_len <= 0 || name_len > 4096) {
      throw std::runtime_error("corrupt checkpoint: " + path);
    }
    std::string name(static_cast<size_t>(name_len), '\0');
    in.read(name.data(), name_len);
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
    if (!params.has(name)) {
      throw std::runtime_error(path + ": unknown parameter '" + name + "'");
    }
    Parameter& p = params.at(name);
    const int64_t rank = read_i64(in, path);
    std::vector<int64_t> shape(static_cast<size_t>(rank));
    for (int64_t& d : shape) d = read_i64(in, path);
    if (shape != p.tensor->shape) {
      throw std::runtime_error(path + ": parameter '" + name + "' has shape " +
                               shape_str(shape) + ", model expects " +
                               shape_str(p.tensor->shape));
    }
    read_doubles(in, p.tensor->value, p.tensor->value.size(), path);
    read_doubles(in, p.momentum, p.momentum.size(), path);
  }
}

}  // namespace fscascade
