#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedvc/tensor.hpp"

namespace fedvc {

// Named parameter collection. std::map keeps iteration order stable
// (lexicographic), which aggregation and serialization rely on.
template <typename S>
class ParamSetT {
 public:
  using Map = std::map<std::string, TensorT<S>>;

  void insert(const std::string& name, TensorT<S> t) {
    if (entries_.count(name)) throw std::invalid_argument("ParamSet: duplicate name " + name);
    entries_.emplace(name, std::move(t));
  }

  TensorT<S>& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("ParamSet: unknown name " + name);
    return it->second;
  }
  const TensorT<S>& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("ParamSet: unknown name " + name);
    return it->second;
  }

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  typename Map::iterator begin() { return entries_.begin(); }
  typename Map::iterator end() { return entries_.end(); }
  typename Map::const_iterator begin() const { return entries_.begin(); }
  typename Map::const_iterator end() const { return entries_.end(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }

  long numel() const {
    long n = 0;
    for (const auto& [k, v] : entries_) n += v.numel();
    return n;
  }

  bool same_layout(const ParamSetT& o) const {
    if (entries_.size() != o.entries_.size()) return false;
    auto a = entries_.begin();
    auto b = o.entries_.begin();
    for (; a != entries_.end(); ++a, ++b)
      if (a->first != b->first || a->second.shape != b->second.shape) return false;
    return true;
  }

  template <typename T>
  ParamSetT<T> cast() const {
    ParamSetT<T> out;
    for (const auto& [k, v] : entries_) out.insert(k, v.template cast<T>());
    return out;
  }

 private:
  Map entries_;
};

using ParamSet = ParamSetT<float>;

// p <- p - lr * g for every name; layouts must match exactly.
template <typename S>
void sgd_step(ParamSetT<S>& params, const ParamSetT<S>& grads, double lr) {
  if (!params.same_layout(grads))
    throw std::invalid_argument("sgd_step: parameter/gradient layout mismatch");
  auto g = grads.begin();
  for (auto p = params.begin(); p != params.end(); ++p, ++g) {
    auto& pd = p->second.data;
    const auto& gd = g->second.data;
    for (size_t i = 0; i < pd.size(); ++i) pd[i] = S(double(pd[i]) - lr * double(gd[i]));
  }
}

// Convex combination with 64-bit accumulation. Weights must sum to 1 within
// 1e-9 and every entry must share one layout.
ParamSet weighted_average(const std::vector<std::pair<const ParamSet*, double>>& updates);

// Binary checkpoint container. Layout: magic "FVC1", u32 version, then per
// tensor: u32 name length, name bytes, u32 rank, u32 per-dim sizes, float32
// little-endian payload.
void save_params(const ParamSet& params, std::ostream& out);
void save_params_file(const ParamSet& params, const std::string& path);
ParamSet load_params(std::istream& in);
ParamSet load_params_file(const std::string& path);

// Serialized size in bytes, used by the traffic counters.
uint64_t serialized_size(const ParamSet& params);

}  // namespace fedvc
