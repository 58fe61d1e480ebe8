#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "fedvc/model.hpp"
#include "fedvc/rng.hpp"

using namespace fedvc;

namespace {

ArchConfig small_arch() {
  ArchConfig a;
  a.input_dim = 4;
  a.hidden_dims = {6, 5};
  a.num_classes = 3;
  a.embed_dim = 2;
  return a;
}

}  // namespace

TEST_CASE("same seed gives identical parameters") {
  auto arch = small_arch();
  auto a = init_model(arch, 31);
  auto b = init_model(arch, 31);
  CHECK(a.same_layout(b));
  for (const auto& name : a.names()) CHECK(a.at(name).data == b.at(name).data);
}

TEST_CASE("different seeds give different parameters") {
  auto arch = small_arch();
  auto a = init_model(arch, 31);
  auto b = init_model(arch, 32);
  CHECK(a.at("trunk.0.w").data != b.at("trunk.0.w").data);
}

TEST_CASE("mnist-shaped model has the closed-form parameter count") {
  ArchConfig arch;
  arch.input_dim = 784;
  arch.hidden_dims = {64};
  arch.num_classes = 10;
  arch.embed_dim = 10;
  auto p = init_model(arch, 1);
  long want = 784L * 64 + 64 + 64L * 10 + 10 + 64L * 10 + 10;
  CHECK(p.numel() == want);
}

TEST_CASE("weights respect the kaiming-uniform bound and biases start at zero") {
  auto arch = small_arch();
  auto p = init_model(arch, 5);
  auto check_layer = [&](const std::string& prefix, int fan_in) {
    double bound = std::sqrt(6.0 / fan_in);
    for (float x : p.at(prefix + ".w").data) {
      CHECK(x <= bound);
      CHECK(x >= -bound);
    }
    for (float x : p.at(prefix + ".b").data) CHECK(x == 0.0f);
  };
  check_layer("trunk.0", 4);
  check_layer("trunk.1", 6);
  check_layer("head.cls", 5);
  check_layer("head.proj", 5);
}

TEST_CASE("duplicated row produces identical outputs") {
  auto arch = small_arch();
  auto p = init_model(arch, 8);
  Rng rng(9);
  Tensor x({2, 4});
  for (int j = 0; j < 4; ++j) {
    x.at(0, j) = float(rng.gaussian());
    x.at(1, j) = x.at(0, j);
  }
  Tape tape;
  auto bound = bind_model(tape, p, false);
  auto out = forward_model(tape, bound, arch, tape.input(x));
  const auto& logits = tape.value(out.logits);
  const auto& embed = tape.value(out.embed);
  for (int j = 0; j < 3; ++j) CHECK(logits.at(0, j) == logits.at(1, j));
  for (int j = 0; j < 2; ++j) CHECK(embed.at(0, j) == embed.at(1, j));
}

TEST_CASE("zero weights make the embedding equal the projection bias") {
  auto arch = small_arch();
  auto p = init_model(arch, 3);
  for (const auto& name : p.names())
    if (name.size() > 2 && name.substr(name.size() - 2) == ".w")
      for (auto& x : p.at(name).data) x = 0.0f;
  p.at("head.proj.b") = Tensor({2}, {0.25f, -1.5f});

  Rng rng(10);
  Tensor x({3, 4});
  for (auto& v : x.data) v = float(rng.gaussian());
  Tape tape;
  auto bound = bind_model(tape, p, false);
  auto out = forward_model(tape, bound, arch, tape.input(x));
  const auto& embed = tape.value(out.embed);
  for (int i = 0; i < 3; ++i) {
    CHECK(embed.at(i, 0) == 0.25f);
    CHECK(embed.at(i, 1) == -1.5f);
  }
}

TEST_CASE("predict matches the tape forward pass") {
  auto arch = small_arch();
  auto p = init_model(arch, 12);
  Rng rng(13);
  Tensor x({5, 4});
  for (auto& v : x.data) v = float(rng.gaussian());

  Tape tape;
  auto bound = bind_model(tape, p, false);
  auto out = forward_model(tape, bound, arch, tape.input(x));
  const auto& logits = tape.value(out.logits);

  auto pred = predict(p, arch, x.data.data(), 5);
  CHECK(pred.logits == logits.data);
  for (int i = 0; i < 5; ++i) {
    int best = 0;
    for (int j = 1; j < 3; ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    CHECK(pred.argmax[i] == best);
    double rowsum = 0;
    for (int j = 0; j < 3; ++j) rowsum += pred.probs[(size_t)i * 3 + j];
    CHECK(rowsum == doctest::Approx(1.0));
  }
}

TEST_CASE("arch validation rejects bad configurations") {
  ArchConfig a = small_arch();
  a.input_dim = 0;
  CHECK_THROWS_AS(a.validate(), std::invalid_argument);
  a = small_arch();
  a.num_classes = 1;
  CHECK_THROWS_AS(a.validate(), std::invalid_argument);
  a = small_arch();
  a.hidden_dims = {};
  CHECK_THROWS_AS(a.validate(), std::invalid_argument);
  a = small_arch();
  a.embed_dim = -2;
  CHECK_THROWS_AS(a.validate(), std::invalid_argument);
}
