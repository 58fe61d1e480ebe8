#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "fedvc/model.hpp"
#include "fedvc/tensor.hpp"

namespace fedvc {

template <typename S>
Var classification_loss(TapeT<S>& tape, Var logits, const std::vector<int>& labels) {
  return tape.cross_entropy(logits, labels);
}

// mean_i || phat_i - p ||^2 where p is a single preference row (length d or
// 1 x d). p may be a constant input or a graph node.
template <typename S>
Var preference_loss(TapeT<S>& tape, Var phat, Var p) {
  if (tape.value(phat).rank() != 2)
    throw std::invalid_argument("preference_loss: phat must be batch x dim");
  int rows = tape.value(phat).shape[0];
  if (tape.value(p).numel() != tape.value(phat).shape[1])
    throw std::invalid_argument("preference_loss: preference length must match phat columns");
  Var diff = tape.add_rowvec(phat, tape.scale(p, -1.0));
  return tape.scale(tape.sum(tape.square(diff)), 1.0 / rows);
}

// In-graph relevance: softmax over log(upsilon_m) - iota * ||z_i - c_m||^2.
template <typename S>
Var relevance_graph(TapeT<S>& tape, Var z, Var concepts, const std::vector<double>& upsilon,
                    double iota) {
  if (!(iota > 0.0)) throw std::invalid_argument("relevance_graph: iota must be positive");
  const auto& tc = tape.value(concepts);
  if (tc.rank() != 2 || (int)upsilon.size() != tc.shape[0])
    throw std::invalid_argument("relevance_graph: upsilon length must match concept count");
  double total = 0.0;
  for (double u : upsilon) {
    if (u < 0.0) throw std::invalid_argument("relevance_graph: negative upsilon");
    total += u;
  }
  if (total <= 0.0) throw std::invalid_argument("relevance_graph: upsilon must not be all zero");

  TensorT<S> log_ups({(int)upsilon.size()});
  for (size_t j = 0; j < upsilon.size(); ++j)
    log_ups.data[j] = upsilon[j] > 0.0 ? S(std::log(upsilon[j])) : S(-1e30);
  Var logits = tape.add_rowvec(tape.scale(tape.pairwise_sqdist(z, concepts), -iota),
                               tape.input(std::move(log_ups)));
  return tape.softmax_rows(logits);
}

template <typename S>
struct LossParts {
  Var loss;
  Var relevance;  // batch x num_concepts
  Var phat;       // batch x concept_dim
};

// Joint objective: mean cross-entropy plus l_p(phat, sg[p]) plus
// gamma * l_p(sg[phat], p), with p = upsilon^T C recomputed in-graph so the
// gamma term trains the concepts. phat is built from detached concepts, so
// the network path and the concept path stay disjoint: the pull term reaches
// only the weights, the anchor term only the concepts.
template <typename S>
LossParts<S> unified_loss(TapeT<S>& tape, const ModelOut<S>& out, const std::vector<int>& labels,
                          Var concepts, const std::vector<double>& upsilon, double iota,
                          double gamma) {
  if (gamma < 0.0) throw std::invalid_argument("unified_loss: gamma must be nonnegative");
  Var frozen = tape.stop_gradient(concepts);
  Var s = relevance_graph(tape, out.embed, frozen, upsilon, iota);
  Var phat = tape.matmul(s, frozen);

  TensorT<S> ups_row({1, (int)upsilon.size()});
  for (size_t j = 0; j < upsilon.size(); ++j) ups_row.data[j] = S(upsilon[j]);
  Var p = tape.matmul(tape.input(std::move(ups_row)), concepts);

  Var ce = tape.cross_entropy(out.logits, labels);
  Var pull = preference_loss(tape, phat, tape.stop_gradient(p));
  Var anchor = preference_loss(tape, tape.stop_gradient(phat), p);
  return {tape.add(ce, tape.add(pull, tape.scale(anchor, gamma))), s, phat};
}

// EM-mode objective: concepts enter as constants, the preference target p is
// fixed for the round, and only the network receives gradients.
template <typename S>
LossParts<S> em_mode_loss(TapeT<S>& tape, const ModelOut<S>& out, const std::vector<int>& labels,
                          Var concepts, const std::vector<double>& upsilon, double iota,
                          const std::vector<double>& preference) {
  const auto& tc = tape.value(concepts);
  if ((int)preference.size() != tc.shape[1])
    throw std::invalid_argument("em_mode_loss: preference length must match concept dim");
  Var s = relevance_graph(tape, out.embed, concepts, upsilon, iota);
  Var phat = tape.matmul(s, concepts);

  TensorT<S> pt({(int)preference.size()});
  for (size_t t = 0; t < preference.size(); ++t) pt.data[t] = S(preference[t]);
  Var p = tape.input(std::move(pt));

  Var ce = tape.cross_entropy(out.logits, labels);
  return {tape.add(ce, preference_loss(tape, phat, p)), s, phat};
}

}  // namespace fedvc
