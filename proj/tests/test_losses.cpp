#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "fedvc/concepts.hpp"
#include "fedvc/losses.hpp"
#include "fedvc/model.hpp"
#include "fedvc/rng.hpp"

using namespace fedvc;

namespace {

using DTape = TapeT<double>;
using DTensor = TensorT<double>;

struct Instance {
  ArchConfig arch;
  ParamSetT<double> params;
  DTensor x;
  std::vector<int> labels;
  DTensor concepts;
  std::vector<double> upsilon;
};

Instance small_instance(uint64_t seed) {
  Instance inst;
  inst.arch.input_dim = 3;
  inst.arch.hidden_dims = {5};
  inst.arch.num_classes = 3;
  inst.arch.embed_dim = 2;
  inst.params = init_model_t<double>(inst.arch, seed);
  Rng rng(seed + 1);
  inst.x = DTensor({3, 3});
  for (auto& v : inst.x.data) v = rng.gaussian();
  inst.labels = {0, 2, 1};
  inst.concepts = DTensor({2, 2});
  for (auto& v : inst.concepts.data) v = rng.gaussian();
  inst.upsilon = {0.6, 0.4};
  return inst;
}

struct Built {
  DTape tape;
  std::vector<Var> param_vars;
  std::vector<std::string> names;
  Var concept_var;
  LossParts<double> parts;
};

void build_unified(Built& b, const Instance& inst, double gamma) {
  b.names = inst.params.names();
  BoundModel<double> bound;
  for (const auto& n : b.names) {
    Var v = b.tape.input(inst.params.at(n), true);
    b.param_vars.push_back(v);
    bound.vars.emplace(n, v);
  }
  b.concept_var = b.tape.input(inst.concepts, true);
  auto out = forward_model(b.tape, bound, inst.arch, b.tape.input(inst.x));
  b.parts = unified_loss(b.tape, out, inst.labels, b.concept_var, inst.upsilon, 0.5, gamma);
  b.tape.backward(b.parts.loss);
}

}  // namespace

TEST_CASE("preference loss of identical vectors is zero") {
  DTape tape;
  Var phat = tape.input(DTensor({2, 3}, {1, 2, 3, 1, 2, 3}));
  Var p = tape.input(DTensor({3}, {1, 2, 3}));
  Var loss = preference_loss(tape, phat, p);
  CHECK(tape.value(loss)[0] == doctest::Approx(0.0));
}

TEST_CASE("preference loss squared-distance arithmetic") {
  DTape tape;
  Var phat = tape.input(DTensor({1, 2}, {3.0, 4.0}));
  Var p = tape.input(DTensor({2}, {0.0, 0.0}));
  Var loss = preference_loss(tape, phat, p);
  CHECK(tape.value(loss)[0] == doctest::Approx(25.0));
}

TEST_CASE("preference loss gradient is 2(phat - p)/B") {
  DTape tape;
  Var phat = tape.input(DTensor({2, 2}, {1.0, 2.0, -1.0, 0.5}), true);
  Var p = tape.input(DTensor({2}, {0.5, 0.5}), true);
  Var loss = preference_loss(tape, phat, p);
  tape.backward(loss);
  CHECK(tape.grad(phat).at(0, 0) == doctest::Approx(2.0 * (1.0 - 0.5) / 2.0));
  CHECK(tape.grad(phat).at(0, 1) == doctest::Approx(2.0 * (2.0 - 0.5) / 2.0));
  CHECK(tape.grad(phat).at(1, 0) == doctest::Approx(2.0 * (-1.0 - 0.5) / 2.0));
  // p receives the negated column sums.
  CHECK(tape.grad(p)[0] == doctest::Approx(-(2.0 * (1.0 - 0.5) + 2.0 * (-1.0 - 0.5)) / 2.0));
}

TEST_CASE("classification loss equals tape cross entropy") {
  Rng rng(1);
  DTape tape;
  DTensor logits({4, 3});
  for (auto& v : logits.data) v = rng.gaussian();
  std::vector<int> labels = {0, 1, 2, 1};
  Var lv = tape.input(logits);
  CHECK(tape.value(classification_loss(tape, lv, labels))[0] ==
        doctest::Approx(tape.value(tape.cross_entropy(lv, labels))[0]));
}

TEST_CASE("relevance graph matches the reference relevance") {
  auto inst = small_instance(3);
  ConceptBank bank;
  bank.num_concepts = 2;
  bank.dim = 2;
  bank.iota = 0.5;
  bank.concepts = inst.concepts;

  DTape tape;
  Var c = tape.input(inst.concepts);
  Var z = tape.input(DTensor({2, 2}, {0.3, -0.7, 1.1, 0.2}));
  Var s = relevance_graph(tape, z, c, inst.upsilon, 0.5);
  auto want = relevance(DTensor({2, 2}, {0.3, -0.7, 1.1, 0.2}), bank, inst.upsilon);
  for (int i = 0; i < 2; ++i)
    for (int m = 0; m < 2; ++m)
      CHECK(tape.value(s).at(i, m) == doctest::Approx(want.at(i, m)).epsilon(1e-10));
}

TEST_CASE("unified loss with gamma zero sends no gradient to concepts") {
  auto inst = small_instance(4);
  Built b;
  build_unified(b, inst, 0.0);
  for (double g : b.tape.grad(b.concept_var).data) CHECK(g == 0.0);
}

TEST_CASE("unified loss trains concepts only through the anchor term") {
  auto inst = small_instance(5);
  Built with;
  build_unified(with, inst, 0.7);

  // The concept gradient equals gamma * d/dC of l_p(sg[phat], p) with
  // p = upsilon^T C: the pull term contributes nothing.
  const auto& s = with.tape.value(with.parts.relevance);
  const auto& phat = with.tape.value(with.parts.phat);
  int batch = s.shape[0];
  std::vector<double> p(2, 0.0);
  for (int m = 0; m < 2; ++m)
    for (int t = 0; t < 2; ++t) p[t] += inst.upsilon[m] * inst.concepts.at(m, t);
  std::vector<double> dp(2, 0.0);
  for (int i = 0; i < batch; ++i)
    for (int t = 0; t < 2; ++t) dp[t] += -2.0 * (phat.at(i, t) - p[t]) / batch;
  for (int m = 0; m < 2; ++m)
    for (int t = 0; t < 2; ++t)
      CHECK(with.tape.grad(with.concept_var).at(m, t) ==
            doctest::Approx(0.7 * inst.upsilon[m] * dp[t]).epsilon(1e-9));
}

TEST_CASE("identical concepts collapse the preference terms") {
  auto inst = small_instance(6);
  for (int t = 0; t < 2; ++t) {
    inst.concepts.at(0, t) = 0.3 * t - 0.1;
    inst.concepts.at(1, t) = 0.3 * t - 0.1;
  }
  Built b;
  build_unified(b, inst, 0.5);

  DTape plain;
  BoundModel<double> bound;
  for (const auto& n : inst.params.names()) bound.vars.emplace(n, plain.input(inst.params.at(n)));
  auto out = forward_model(plain, bound, inst.arch, plain.input(inst.x));
  double ce = plain.value(plain.cross_entropy(out.logits, inst.labels))[0];
  CHECK(b.tape.value(b.parts.loss)[0] == doctest::Approx(ce).epsilon(1e-9));
}

TEST_CASE("unified loss gradients match finite differences") {
  // The backward pass differentiates the objective with every stop-gradient
  // argument held constant, so the finite-difference oracle evaluates that
  // surrogate: concepts inside the relevance/phat path and the anchored
  // phat are frozen at the base point, while p = upsilon^T C stays live.
  auto inst = small_instance(7);
  double gamma = 0.3, iota = 0.5, h = 1e-5;

  DTape tape;
  BoundModel<double> bound;
  std::vector<std::string> names = inst.params.names();
  std::vector<Var> vars;
  for (const auto& n : names) {
    Var v = tape.input(inst.params.at(n), true);
    vars.push_back(v);
    bound.vars.emplace(n, v);
  }
  Var cv = tape.input(inst.concepts, true);
  auto out = forward_model(tape, bound, inst.arch, tape.input(inst.x));
  auto parts = unified_loss(tape, out, inst.labels, cv, inst.upsilon, iota, gamma);
  tape.backward(parts.loss);

  DTensor phat0 = tape.value(parts.phat);
  std::vector<double> p0(2, 0.0);
  for (int m = 0; m < 2; ++m)
    for (int t = 0; t < 2; ++t) p0[t] += inst.upsilon[m] * inst.concepts.at(m, t);

  auto eval = [&](const ParamSetT<double>& params, const DTensor& concepts) {
    DTape t;
    BoundModel<double> b;
    for (const auto& n : params.names()) b.vars.emplace(n, t.input(params.at(n)));
    auto o = forward_model(t, b, inst.arch, t.input(inst.x));
    Var frozen = t.input(inst.concepts);
    Var s = relevance_graph(t, o.embed, frozen, inst.upsilon, iota);
    Var phat = t.matmul(s, frozen);
    Var ce = t.cross_entropy(o.logits, inst.labels);
    Var pull = preference_loss(t, phat, t.input(DTensor({2}, {p0[0], p0[1]})));
    DTensor ups_row({1, 2}, {inst.upsilon[0], inst.upsilon[1]});
    Var p = t.matmul(t.input(ups_row), t.input(concepts));
    Var anchor = preference_loss(t, t.input(phat0), p);
    return double(t.value(t.add(ce, t.add(pull, t.scale(anchor, gamma))))[0]);
  };

  // Forward identity: the surrogate agrees with the sg graph at the base.
  CHECK(eval(inst.params, inst.concepts) ==
        doctest::Approx(double(tape.value(parts.loss)[0])).epsilon(1e-12));

  for (size_t v = 0; v < names.size(); ++v) {
    for (size_t i = 0; i < inst.params.at(names[v]).data.size(); ++i) {
      auto plus = inst.params;
      auto minus = inst.params;
      plus.at(names[v]).data[i] += h;
      minus.at(names[v]).data[i] -= h;
      double fd = (eval(plus, inst.concepts) - eval(minus, inst.concepts)) / (2 * h);
      double a = tape.grad(vars[v]).data[i];
      CHECK(std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)}) < 1e-4);
    }
  }
  for (size_t i = 0; i < inst.concepts.data.size(); ++i) {
    auto plus = inst.concepts;
    auto minus = inst.concepts;
    plus.data[i] += h;
    minus.data[i] -= h;
    double fd = (eval(inst.params, plus) - eval(inst.params, minus)) / (2 * h);
    double a = tape.grad(cv).data[i];
    CHECK(std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)}) < 1e-4);
  }
}

TEST_CASE("em-mode loss keeps concepts constant") {
  auto inst = small_instance(8);
  DTape tape;
  BoundModel<double> bound;
  std::vector<Var> vars;
  for (const auto& n : inst.params.names()) {
    Var v = tape.input(inst.params.at(n), true);
    vars.push_back(v);
    bound.vars.emplace(n, v);
  }
  // Concepts enter as a constant input, exactly as the EM client binds them.
  Var cv = tape.input(inst.concepts, false);
  auto out = forward_model(tape, bound, inst.arch, tape.input(inst.x));
  std::vector<double> pref(2, 0.0);
  for (int m = 0; m < 2; ++m)
    for (int t = 0; t < 2; ++t) pref[t] += inst.upsilon[m] * inst.concepts.at(m, t);
  auto parts = em_mode_loss(tape, out, inst.labels, cv, inst.upsilon, 0.5, pref);
  tape.backward(parts.loss);
  for (double g : tape.grad(cv).data) CHECK(g == 0.0);
  bool any = false;
  for (auto v : vars)
    for (double g : tape.grad(v).data) any = any || g != 0.0;
  CHECK(any);
  CHECK(tape.value(parts.loss)[0] > 0.0);
}

TEST_CASE("em-mode loss rejects a preference of the wrong length") {
  auto inst = small_instance(9);
  DTape tape;
  BoundModel<double> bound;
  for (const auto& n : inst.params.names()) bound.vars.emplace(n, tape.input(inst.params.at(n)));
  Var cv = tape.input(inst.concepts);
  auto out = forward_model(tape, bound, inst.arch, tape.input(inst.x));
  CHECK_THROWS_AS(em_mode_loss(tape, out, inst.labels, cv, inst.upsilon, 0.5, {1.0, 2.0, 3.0}),
                  std::invalid_argument);
}

TEST_CASE("unified loss rejects negative gamma") {
  auto inst = small_instance(10);
  DTape tape;
  BoundModel<double> bound;
  for (const auto& n : inst.params.names()) bound.vars.emplace(n, tape.input(inst.params.at(n)));
  Var cv = tape.input(inst.concepts);
  auto out = forward_model(tape, bound, inst.arch, tape.input(inst.x));
  CHECK_THROWS_AS(unified_loss(tape, out, inst.labels, cv, inst.upsilon, 0.5, -0.1),
                  std::invalid_argument);
}
