#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <vector>

#include "fedvc/model.hpp"
#include "fedvc/rng.hpp"
#include "fedvc/tensor.hpp"

using namespace fedvc;

namespace {

using DTape = TapeT<double>;
using DTensor = TensorT<double>;

// Builds the graph over trainable inputs and returns the scalar loss value.
using GraphFn = std::function<Var(DTape&, const std::vector<Var>&)>;

double eval_graph(const std::vector<DTensor>& inputs, const GraphFn& graph) {
  DTape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.input(t, true));
  Var loss = graph(tape, vars);
  return double(tape.value(loss)[0]);
}

// Central finite differences against the analytic backward pass.
void check_gradients(const std::vector<DTensor>& inputs, const GraphFn& graph, double h = 1e-4,
                     double tol = 1e-4) {
  DTape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.input(t, true));
  Var loss = graph(tape, vars);
  tape.backward(loss);

  for (size_t v = 0; v < inputs.size(); ++v) {
    const auto& analytic = tape.grad(vars[v]);
    for (size_t i = 0; i < inputs[v].data.size(); ++i) {
      auto plus = inputs;
      auto minus = inputs;
      plus[v].data[i] += h;
      minus[v].data[i] -= h;
      double fd = (eval_graph(plus, graph) - eval_graph(minus, graph)) / (2.0 * h);
      double a = analytic.data[i];
      double err = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
      CHECK(err < tol);
    }
  }
}

DTensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  DTensor t(std::move(shape));
  for (auto& x : t.data) x = scale * rng.gaussian();
  return t;
}

}  // namespace

TEST_CASE("relu forward") {
  TapeT<double> tape;
  Var x = tape.input(DTensor({3}, {-1.0, 0.0, 2.0}));
  Var y = tape.relu(x);
  CHECK(tape.value(y)[0] == 0.0);
  CHECK(tape.value(y)[1] == 0.0);
  CHECK(tape.value(y)[2] == 2.0);
}

TEST_CASE("softmax of equal logits is uniform") {
  TapeT<double> tape;
  Var x = tape.input(DTensor({1, 2}, {0.0, 0.0}));
  Var y = tape.softmax_rows(x);
  CHECK(tape.value(y)[0] == doctest::Approx(0.5));
  CHECK(tape.value(y)[1] == doctest::Approx(0.5));
}

TEST_CASE("sum of squares gradient is 2w") {
  TapeT<double> tape;
  Var w = tape.input(DTensor({2}, {1.0, 2.0}), true);
  Var loss = tape.sum(tape.square(w));
  tape.backward(loss);
  CHECK(tape.grad(w)[0] == doctest::Approx(2.0));
  CHECK(tape.grad(w)[1] == doctest::Approx(4.0));
}

TEST_CASE("stop_gradient forward is the identity") {
  TapeT<double> tape;
  Var x = tape.input(DTensor({1}, {3.0}));
  Var y = tape.stop_gradient(x);
  CHECK(tape.value(y)[0] == 3.0);
}

TEST_CASE("stop_gradient blocks flow exactly") {
  // loss = sg[w] * v: grad w must be exactly zero, grad v = value(w).
  TapeT<double> tape;
  Var w = tape.input(DTensor({2}, {1.5, -2.0}), true);
  Var v = tape.input(DTensor({2}, {4.0, 5.0}), true);
  Var loss = tape.sum(tape.mul(tape.stop_gradient(w), v));
  tape.backward(loss);
  CHECK(tape.grad(w)[0] == 0.0);
  CHECK(tape.grad(w)[1] == 0.0);
  CHECK(tape.grad(v)[0] == 1.5);
  CHECK(tape.grad(v)[1] == -2.0);
}

TEST_CASE("d(sg[x]^2)/dx is exactly zero") {
  TapeT<double> tape;
  Var x = tape.input(DTensor({1}, {1.7}), true);
  Var loss = tape.sum(tape.square(tape.stop_gradient(x)));
  tape.backward(loss);
  CHECK(tape.grad(x)[0] == 0.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  TapeT<double> tape;
  Var x = tape.input(DTensor({2}, {1.0, 2.0}), true);
  Var y = tape.square(x);
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
}

TEST_CASE("matmul gradients vs finite differences") {
  Rng rng(3);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 2}, rng);
  check_gradients({a, b}, [](DTape& t, const std::vector<Var>& v) {
    return t.sum(t.square(t.matmul(v[0], v[1])));
  });
}

TEST_CASE("add_rowvec gradients vs finite differences") {
  Rng rng(4);
  auto a = random_tensor({3, 5}, rng);
  auto b = random_tensor({5}, rng);
  check_gradients({a, b}, [](DTape& t, const std::vector<Var>& v) {
    return t.mean(t.square(t.add_rowvec(v[0], v[1])));
  });
}

TEST_CASE("softmax and elementwise gradients vs finite differences") {
  Rng rng(5);
  auto a = random_tensor({4, 3}, rng);
  auto b = random_tensor({4, 3}, rng);
  check_gradients({a, b}, [](DTape& t, const std::vector<Var>& v) {
    Var s = t.softmax_rows(v[0]);
    return t.sum(t.mul(s, t.square(v[1])));
  });
}

TEST_CASE("cross_entropy gradients vs finite differences") {
  Rng rng(6);
  auto logits = random_tensor({5, 4}, rng);
  std::vector<int> labels = {0, 3, 1, 2, 2};
  check_gradients({logits}, [&](DTape& t, const std::vector<Var>& v) {
    return t.cross_entropy(v[0], labels);
  });
}

TEST_CASE("cross_entropy of confident correct logits approaches zero") {
  TapeT<double> tape;
  DTensor logits({2, 3}, 0.0);
  logits.at(0, 1) = 50.0;
  logits.at(1, 2) = 50.0;
  Var loss = tape.cross_entropy(tape.input(logits), {1, 2});
  CHECK(tape.value(loss)[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cross_entropy of uniform logits is log(num_classes)") {
  TapeT<double> tape;
  Var loss = tape.cross_entropy(tape.input(DTensor({3, 10}, 0.0)), {0, 5, 9});
  CHECK(tape.value(loss)[0] == doctest::Approx(std::log(10.0)));
}

TEST_CASE("pairwise_sqdist gradients vs finite differences") {
  Rng rng(7);
  auto z = random_tensor({4, 3}, rng);
  auto c = random_tensor({2, 3}, rng);
  check_gradients({z, c}, [](DTape& t, const std::vector<Var>& v) {
    return t.mean(t.pairwise_sqdist(v[0], v[1]));
  });
}

TEST_CASE("scale sub mul gradients vs finite differences") {
  Rng rng(8);
  auto a = random_tensor({2, 3}, rng);
  auto b = random_tensor({2, 3}, rng);
  check_gradients({a, b}, [](DTape& t, const std::vector<Var>& v) {
    return t.sum(t.mul(t.scale(t.sub(v[0], v[1]), 0.37), v[1]));
  });
}

TEST_CASE("random MLP gradients vs finite differences across seeds") {
  // Smaller step keeps central differences inside a fixed relu activation
  // pattern for these seeds.
  int accepted = 0;
  for (uint64_t seed = 1; accepted < 12 && seed < 200; ++seed) {
    Rng rng(seed);
    ArchConfig arch;
    arch.input_dim = 3;
    arch.hidden_dims = {5, 4};
    arch.num_classes = 3;
    arch.embed_dim = 2;
    auto params = init_model_t<double>(arch, seed);
    auto x = random_tensor({4, 3}, rng);
    std::vector<int> labels = {0, 1, 2, 1};

    std::vector<std::string> names = params.names();
    std::vector<DTensor> inputs;
    for (const auto& n : names) inputs.push_back(params.at(n));
    inputs.push_back(x);

    auto graph = [&](DTape& t, const std::vector<Var>& v) {
      ParamSetT<double> p;
      for (size_t i = 0; i < names.size(); ++i) p.insert(names[i], inputs[i]);
      BoundModel<double> bound;
      for (size_t i = 0; i < names.size(); ++i) bound.vars.emplace(names[i], v[i]);
      auto out = forward_model(t, bound, arch, v.back());
      return t.add(t.cross_entropy(out.logits, labels), t.mean(t.square(out.embed)));
    };

    check_gradients(inputs, graph, 1e-5, 5e-4);
    ++accepted;
  }
  CHECK(accepted == 12);
}

TEST_CASE("batching invariance of forward") {
  Rng rng(21);
  ArchConfig arch;
  arch.input_dim = 4;
  arch.hidden_dims = {6};
  arch.num_classes = 3;
  arch.embed_dim = 2;
  auto params = init_model(arch, 77);

  Tensor a({2, 4});
  Tensor b({3, 4});
  for (auto& x : a.data) x = float(rng.gaussian());
  for (auto& x : b.data) x = float(rng.gaussian());
  Tensor ab({5, 4});
  std::copy(a.data.begin(), a.data.end(), ab.data.begin());
  std::copy(b.data.begin(), b.data.end(), ab.data.begin() + a.data.size());

  auto run = [&](const Tensor& x) {
    Tape tape;
    auto bound = bind_model(tape, params, false);
    auto out = forward_model(tape, bound, arch, tape.input(x));
    return tape.value(out.logits);
  };
  auto la = run(a);
  auto lb = run(b);
  auto lab = run(ab);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) CHECK(lab.at(i, j) == doctest::Approx(la.at(i, j)).epsilon(1e-6));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(lab.at(2 + i, j) == doctest::Approx(lb.at(i, j)).epsilon(1e-6));
}

TEST_CASE("gradients accumulate when a variable feeds two paths") {
  TapeT<double> tape;
  Var x = tape.input(DTensor({1}, {3.0}), true);
  // loss = x^2 + 2x -> dloss/dx = 2x + 2 = 8.
  Var loss = tape.add(tape.sum(tape.square(x)), tape.sum(tape.scale(x, 2.0)));
  tape.backward(loss);
  CHECK(tape.grad(x)[0] == doctest::Approx(8.0));
}

TEST_CASE("non-trainable inputs report zero gradients") {
  TapeT<double> tape;
  Var x = tape.input(DTensor({2}, {1.0, 2.0}), false);
  Var w = tape.input(DTensor({2}, {3.0, 4.0}), true);
  Var loss = tape.sum(tape.mul(x, w));
  tape.backward(loss);
  CHECK(tape.grad(x)[0] == 0.0);
  CHECK(tape.grad(x)[1] == 0.0);
  CHECK(tape.grad(w)[0] == 1.0);
}
