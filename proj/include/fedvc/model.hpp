#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedvc/params.hpp"
#include "fedvc/rng.hpp"
#include "fedvc/tensor.hpp"

namespace fedvc {

// MLP trunk with two heads: a classifier over num_classes and a linear
// projection into the concept space.
struct ArchConfig {
  int input_dim = 2;
  std::vector<int> hidden_dims = {64, 64};
  int num_classes = 2;
  int embed_dim = 10;

  void validate() const {
    if (input_dim <= 0) throw std::invalid_argument("ArchConfig: input_dim must be positive");
    if (num_classes < 2) throw std::invalid_argument("ArchConfig: num_classes must be at least 2");
    if (embed_dim <= 0) throw std::invalid_argument("ArchConfig: embed_dim must be positive");
    if (hidden_dims.empty()) throw std::invalid_argument("ArchConfig: at least one hidden layer required");
    for (int h : hidden_dims)
      if (h <= 0) throw std::invalid_argument("ArchConfig: hidden dims must be positive");
  }
};

// Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases. Layer order
// is fixed so a given seed always yields the same parameters.
template <typename S>
ParamSetT<S> init_model_t(const ArchConfig& arch, uint64_t seed) {
  arch.validate();
  Rng rng(seed);
  ParamSetT<S> params;
  auto dense = [&](const std::string& prefix, int fan_in, int fan_out) {
    double bound = std::sqrt(6.0 / fan_in);
    TensorT<S> w({fan_in, fan_out});
    for (auto& x : w.data) x = S(rng.uniform(-bound, bound));
    params.insert(prefix + ".w", std::move(w));
    params.insert(prefix + ".b", TensorT<S>({fan_out}, S(0)));
  };
  int in = arch.input_dim;
  for (size_t i = 0; i < arch.hidden_dims.size(); ++i) {
    dense("trunk." + std::to_string(i), in, arch.hidden_dims[i]);
    in = arch.hidden_dims[i];
  }
  dense("head.cls", in, arch.num_classes);
  dense("head.proj", in, arch.embed_dim);
  return params;
}

inline ParamSet init_model(const ArchConfig& arch, uint64_t seed) {
  return init_model_t<float>(arch, seed);
}

// Parameters registered on a tape for one forward/backward pass.
template <typename S>
struct BoundModel {
  std::map<std::string, Var> vars;

  Var at(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw std::out_of_range("BoundModel: unknown name " + name);
    return it->second;
  }
};

template <typename S>
BoundModel<S> bind_model(TapeT<S>& tape, const ParamSetT<S>& params, bool requires_grad = true) {
  BoundModel<S> bound;
  for (const auto& [name, t] : params) bound.vars.emplace(name, tape.input(t, requires_grad));
  return bound;
}

template <typename S>
struct ModelOut {
  Var hidden;  // batch x last hidden width
  Var logits;  // batch x num_classes
  Var embed;   // batch x embed_dim
};

template <typename S>
ModelOut<S> forward_model(TapeT<S>& tape, const BoundModel<S>& bound, const ArchConfig& arch, Var x) {
  if (tape.value(x).rank() != 2 || tape.value(x).shape[1] != arch.input_dim)
    throw std::invalid_argument("forward_model: input must be batch x input_dim");
  Var h = x;
  for (size_t i = 0; i < arch.hidden_dims.size(); ++i) {
    std::string prefix = "trunk." + std::to_string(i);
    h = tape.relu(tape.add_rowvec(tape.matmul(h, bound.at(prefix + ".w")), bound.at(prefix + ".b")));
  }
  ModelOut<S> out;
  out.hidden = h;
  out.logits = tape.add_rowvec(tape.matmul(h, bound.at("head.cls.w")), bound.at("head.cls.b"));
  out.embed = tape.add_rowvec(tape.matmul(h, bound.at("head.proj.w")), bound.at("head.proj.b"));
  return out;
}

// Inference without a tape, for evaluation paths.
struct Prediction {
  std::vector<float> logits;  // n x num_classes
  std::vector<float> probs;   // n x num_classes
  std::vector<float> embed;   // n x embed_dim
  std::vector<int> argmax;    // n
};

Prediction predict(const ParamSet& params, const ArchConfig& arch, const float* x, int n);

// Gradients for every parameter after a backward pass, in ParamSet layout.
template <typename S>
ParamSetT<S> collect_grads(const TapeT<S>& tape, const BoundModel<S>& bound) {
  ParamSetT<S> grads;
  for (const auto& [name, var] : bound.vars) grads.insert(name, tape.grad(var));
  return grads;
}

}  // namespace fedvc
