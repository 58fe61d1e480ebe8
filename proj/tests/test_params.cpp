#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "fedvc/params.hpp"
#include "fedvc/rng.hpp"

using namespace fedvc;

namespace {

ParamSet random_params(uint64_t seed) {
  Rng rng(seed);
  ParamSet p;
  Tensor w({3, 4});
  for (auto& x : w.data) x = float(rng.gaussian());
  p.insert("layer.w", std::move(w));
  Tensor b({4});
  for (auto& x : b.data) x = float(rng.gaussian());
  p.insert("layer.b", std::move(b));
  return p;
}

}  // namespace

TEST_CASE("sgd_step arithmetic") {
  ParamSet p;
  p.insert("w", Tensor({1}, {1.0f}));
  ParamSet g;
  g.insert("w", Tensor({1}, {2.0f}));
  sgd_step(p, g, 0.1);
  CHECK(p.at("w")[0] == doctest::Approx(0.8f));
}

TEST_CASE("sgd_step with lr zero leaves params unchanged") {
  auto p = random_params(1);
  auto before = p;
  auto g = random_params(2);
  sgd_step(p, g, 0.0);
  CHECK(p.at("layer.w").data == before.at("layer.w").data);
  CHECK(p.at("layer.b").data == before.at("layer.b").data);
}

TEST_CASE("sgd_step rejects layout mismatch") {
  auto p = random_params(1);
  ParamSet g;
  g.insert("other", Tensor({2}, {1.0f, 2.0f}));
  CHECK_THROWS_AS(sgd_step(p, g, 0.1), std::invalid_argument);
}

TEST_CASE("weighted_average identity") {
  auto p = random_params(3);
  ParamSet got = weighted_average({{&p, 1.0}});
  CHECK(got.same_layout(p));
  CHECK(got.at("layer.w").data == p.at("layer.w").data);
}

TEST_CASE("weighted_average of identical sets is that set") {
  auto p = random_params(4);
  ParamSet got = weighted_average({{&p, 0.3}, {&p, 0.7}});
  for (const auto& name : p.names())
    for (size_t i = 0; i < p.at(name).data.size(); ++i)
      CHECK(got.at(name).data[i] == doctest::Approx(p.at(name).data[i]).epsilon(1e-7));
}

TEST_CASE("weighted_average matches loop oracle") {
  auto a = random_params(5);
  auto b = random_params(6);
  auto c = random_params(7);
  double wa = 0.2, wb = 0.5, wc = 0.3;
  ParamSet got = weighted_average({{&a, wa}, {&b, wb}, {&c, wc}});
  // The accumulation runs in double and rounds once to storage precision;
  // a same-order loop oracle must agree exactly.
  for (const auto& name : a.names()) {
    for (size_t i = 0; i < a.at(name).data.size(); ++i) {
      double want = 0.0;
      want += wa * double(a.at(name).data[i]);
      want += wb * double(b.at(name).data[i]);
      want += wc * double(c.at(name).data[i]);
      CHECK(got.at(name).data[i] == float(want));
    }
  }
}

TEST_CASE("weighted_average rejects weights not summing to one") {
  auto a = random_params(8);
  CHECK_THROWS_AS(weighted_average({{&a, 0.5}}), std::invalid_argument);
}

TEST_CASE("weighted_average rejects layout mismatch") {
  auto a = random_params(9);
  ParamSet b;
  b.insert("layer.w", Tensor({2, 2}, 0.0f));
  CHECK_THROWS_AS(weighted_average({{&a, 0.5}, {&b, 0.5}}), std::invalid_argument);
}

TEST_CASE("checkpoint stream round-trip is exact") {
  auto p = random_params(10);
  std::stringstream ss;
  save_params(p, ss);
  ParamSet got = load_params(ss);
  CHECK(got.same_layout(p));
  for (const auto& name : p.names()) CHECK(got.at(name).data == p.at(name).data);
}

TEST_CASE("checkpoint file round-trip is exact") {
  auto p = random_params(11);
  std::string path = "params_roundtrip.ckpt";
  save_params_file(p, path);
  ParamSet got = load_params_file(path);
  CHECK(got.same_layout(p));
  for (const auto& name : p.names()) CHECK(got.at(name).data == p.at(name).data);
  std::remove(path.c_str());
}

TEST_CASE("serialized_size matches actual byte count") {
  auto p = random_params(12);
  std::stringstream ss;
  save_params(p, ss);
  CHECK(serialized_size(p) == (uint64_t)ss.str().size());
}

TEST_CASE("load rejects bad magic") {
  std::stringstream ss;
  ss << "NOPE" << std::string(16, '\0');
  CHECK_THROWS_WITH_AS(load_params(ss), doctest::Contains("magic"), std::runtime_error);
}

TEST_CASE("load rejects truncated payload") {
  auto p = random_params(13);
  std::stringstream ss;
  save_params(p, ss);
  std::string bytes = ss.str();
  std::stringstream cut(bytes.substr(0, bytes.size() - 7));
  CHECK_THROWS_WITH_AS(load_params(cut), doctest::Contains("truncated"), std::runtime_error);
}

TEST_CASE("load rejects implausible name length") {
  std::stringstream ss;
  ss << "FVC1";
  auto put_u32 = [&](uint32_t v) {
    char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
    ss.write(b, 4);
  };
  put_u32(1);           // version
  put_u32(1);           // tensor count
  put_u32(0xffffffff);  // absurd name length
  CHECK_THROWS_AS(load_params(ss), std::runtime_error);
}

TEST_CASE("load rejects unknown version") {
  std::stringstream ss;
  ss << "FVC1";
  auto put_u32 = [&](uint32_t v) {
    char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
    ss.write(b, 4);
  };
  put_u32(99);
  put_u32(0);
  CHECK_THROWS_WITH_AS(load_params(ss), doctest::Contains("version"), std::runtime_error);
}

TEST_CASE("params cast between float and double preserves layout") {
  auto p = random_params(14);
  auto pd = p.cast<double>();
  auto back = pd.cast<float>();
  CHECK(back.same_layout(p));
  for (const auto& name : p.names()) CHECK(back.at(name).data == p.at(name).data);
}

TEST_CASE("names are sorted and stable") {
  ParamSet p;
  p.insert("zz", Tensor({1}, {1.0f}));
  p.insert("aa", Tensor({1}, {2.0f}));
  p.insert("mm", Tensor({1}, {3.0f}));
  auto names = p.names();
  REQUIRE(names.size() == 3);
  CHECK(names[0] == "aa");
  CHECK(names[1] == "mm");
  CHECK(names[2] == "zz");
}
