#include "fedvc/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace fedvc {

namespace {

constexpr char kMagic[4] = {'F', 'V', 'C', '1'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                        (unsigned char)((v >> 16) & 0xff), (unsigned char)((v >> 24) & 0xff)};
  out.write((const char*)b, 4);
}

uint32_t get_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  if (!in.read((char*)b, 4))
    throw std::runtime_error(std::string("checkpoint: truncated while reading ") + what);
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) | (uint32_t(b[3]) << 24);
}

void put_f32(std::ostream& out, float v) {
  static_assert(sizeof(float) == 4);
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

float get_f32(std::istream& in, const char* what) {
  uint32_t bits = get_u32(in, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

ParamSet weighted_average(const std::vector<std::pair<const ParamSet*, double>>& updates) {
  if (updates.empty()) throw std::invalid_argument("weighted_average: no updates");
  double wsum = 0.0;
  for (const auto& [p, w] : updates) {
    if (w < 0.0) throw std::invalid_argument("weighted_average: negative weight");
    wsum += w;
  }
  if (std::fabs(wsum - 1.0) > 1e-9)
    throw std::invalid_argument("weighted_average: weights must sum to 1");
  const ParamSet& first = *updates[0].first;
  for (const auto& [p, w] : updates)
    if (!p->same_layout(first)) throw std::invalid_argument("weighted_average: layout mismatch");

  ParamSet out;
  for (const auto& [name, t] : first) {
    std::vector<double> acc(t.numel(), 0.0);
    for (const auto& [p, w] : updates) {
      const auto& src = p->at(name).data;
      for (size_t i = 0; i < src.size(); ++i) acc[i] += w * double(src[i]);
    }
    TensorT<float> merged(t.shape);
    for (size_t i = 0; i < acc.size(); ++i) merged.data[i] = float(acc[i]);
    out.insert(name, std::move(merged));
  }
  return out;
}

void save_params(const ParamSet& params, std::ostream& out) {
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, (uint32_t)params.size());
  for (const auto& [name, t] : params) {
    put_u32(out, (uint32_t)name.size());
    out.write(name.data(), (std::streamsize)name.size());
    put_u32(out, (uint32_t)t.shape.size());
    for (int d : t.shape) put_u32(out, (uint32_t)d);
    for (float v : t.data) put_f32(out, v);
  }
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

void save_params_file(const ParamSet& params, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  save_params(params, f);
}

ParamSet load_params(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw std::runtime_error("checkpoint: truncated while reading magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic, not an FVC1 file");
  uint32_t version = get_u32(in, "version");
  if (version != kVersion) {
    std::ostringstream msg;
    msg << "checkpoint: unsupported version " << version << " (expected " << kVersion << ")";
    throw std::runtime_error(msg.str());
  }
  uint32_t count = get_u32(in, "entry count");
  ParamSet out;
  for (uint32_t e = 0; e < count; ++e) {
    uint32_t name_len = get_u32(in, "name length");
    if (name_len == 0 || name_len > 4096)
      throw std::runtime_error("checkpoint: implausible name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len))
      throw std::runtime_error("checkpoint: truncated while reading name");
    uint32_t rank = get_u32(in, "rank");
    if (rank == 0 || rank > 8) throw std::runtime_error("checkpoint: implausible rank for " + name);
    std::vector<int> shape(rank);
    long numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      uint32_t d = get_u32(in, "dimension");
      if (d == 0 || d > (1u << 28)) throw std::runtime_error("checkpoint: implausible dimension for " + name);
      shape[i] = (int)d;
      numel *= d;
    }
    TensorT<float> t(shape);
    for (long i = 0; i < numel; ++i) t.data[(size_t)i] = get_f32(in, name.c_str());
    out.insert(name, std::move(t));
  }
  return out;
}

ParamSet load_params_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  return load_params(f);
}

uint64_t serialized_size(const ParamSet& params) {
  uint64_t n = 4 + 4 + 4;
  for (const auto& [name, t] : params)
    n += 4 + name.size() + 4 + 4ull * t.shape.size() + 4ull * (uint64_t)t.numel();
  return n;
}

}  // namespace fedvc
