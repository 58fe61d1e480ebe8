#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "fedvc/experiment.hpp"

using namespace fedvc;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  std::stringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.seed = 3;
  cfg.strategy = "fedvc_em";
  cfg.dataset.samples = 600;
  cfg.partition.num_groups = 3;
  cfg.partition.train_groups = 2;
  cfg.partition.clients_per_group = 3;
  cfg.hidden_dims = {8};
  cfg.concepts.num = 4;
  cfg.concepts.dim = 4;
  cfg.federation.rounds = 3;
  cfg.federation.epochs = 1;
  cfg.federation.cohort = 4;
  return cfg;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::path("t_exp") / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("empty config yields the documented defaults") {
  auto cfg = parse_config_json("{}");
  CHECK(cfg.strategy == "fedvc_em");
  CHECK(cfg.seed == 1);
  CHECK(cfg.dataset.type == "synth_gmm");
  CHECK(cfg.dataset.samples == 2000);
  CHECK(cfg.partition.num_groups == 5);
  CHECK(cfg.partition.train_groups == 3);
  CHECK(cfg.partition.clients_per_group == 8);
  CHECK(cfg.partition.alpha == 0.5);
  CHECK(cfg.hidden_dims == std::vector<int>{64, 64});
  CHECK(cfg.concepts.num == 10);
  CHECK(cfg.concepts.dim == 10);
  CHECK(cfg.concepts.iota == 0.1);
  CHECK(cfg.concepts.kappa == 0.05);
  CHECK(cfg.concepts.gamma == 0.1);
  CHECK(cfg.federation.rounds == 50);
  CHECK(cfg.federation.epochs == 2);
  CHECK(cfg.federation.batch_size == 10);
  CHECK(cfg.federation.cohort == 10);
  CHECK(cfg.federation.lr == 0.005);
  CHECK(cfg.federation.decay == 0.8);
  CHECK(cfg.federation.decay_every == 10);
  CHECK(cfg.federation.prox_mu == 0.01);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("unknown keys are rejected with their full path") {
  CHECK_THROWS_WITH_AS(parse_config_json(R"({"federation": {"rownds": 3}})"),
                       doctest::Contains("federation.rownds"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config_json(R"({"stratgy": "fedavg"})"), doctest::Contains("stratgy"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config_json(R"({"concepts": {"Iota": 0.5}})"),
                       doctest::Contains("concepts.Iota"), std::invalid_argument);
}

TEST_CASE("type mismatches name the offending key") {
  CHECK_THROWS_WITH_AS(parse_config_json(R"({"federation": {"rounds": "many"}})"),
                       doctest::Contains("federation.rounds"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config_json(R"({"hidden_dims": 64})"), doctest::Contains("hidden_dims"),
                       std::invalid_argument);
}

TEST_CASE("malformed json is rejected") {
  CHECK_THROWS_WITH_AS(parse_config_json("{"), doctest::Contains("invalid JSON"), std::invalid_argument);
}

TEST_CASE("constraint violations surface from validate") {
  auto cfg = parse_config_json(R"({"concepts": {"iota": -1.0}})");
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("iota"), std::invalid_argument);

  auto cfg2 = parse_config_json(R"({"strategy": "sgd"})");
  CHECK_THROWS_AS(cfg2.validate(), std::invalid_argument);

  auto cfg3 = parse_config_json(R"({"dataset": {"type": "idx"}})");
  CHECK_THROWS_WITH_AS(cfg3.validate(), doctest::Contains("idx_images"), std::invalid_argument);

  auto cfg4 = parse_config_json(R"({"partition": {"train_groups": 9}})");
  CHECK_THROWS_AS(cfg4.validate(), std::invalid_argument);
}

TEST_CASE("overrides beat file values and keep strict checking") {
  auto cfg = parse_config_json(R"({"federation": {"rounds": 5}})");
  CHECK(cfg.federation.rounds == 5);
  apply_override(cfg, "federation.rounds=7");
  CHECK(cfg.federation.rounds == 7);

  apply_override(cfg, "strategy=fedavg");
  CHECK(cfg.strategy == "fedavg");
  apply_override(cfg, "concepts.kmeanspp=true");
  CHECK(cfg.concepts.kmeanspp);
  apply_override(cfg, "concepts.iota=0.5");
  CHECK(cfg.concepts.iota == 0.5);
  apply_override(cfg, "hidden_dims=[16,8]");
  CHECK(cfg.hidden_dims == std::vector<int>{16, 8});
  apply_override(cfg, "partition.mode=feature_shift");
  CHECK(cfg.partition.mode == ShiftMode::kFeatureShift);

  CHECK_THROWS_WITH_AS(apply_override(cfg, "federation.rownds=3"), doctest::Contains("federation.rownds"),
                       std::invalid_argument);
  CHECK_THROWS_AS(apply_override(cfg, "no_equals_sign"), std::invalid_argument);
  CHECK_THROWS_AS(apply_override(cfg, "federation.rounds=\"many\""), std::invalid_argument);
}

TEST_CASE("config json round-trips exactly") {
  auto cfg = tiny_config();
  cfg.run_id = "rt";
  cfg.partition.mode = ShiftMode::kFeatureShift;
  std::string a = config_to_json(cfg);
  auto back = parse_config_json(a);
  CHECK(config_to_json(back) == a);
}

TEST_CASE("resolved run id derives from strategy and seed") {
  auto cfg = tiny_config();
  CHECK(cfg.resolved_run_id() == "fedvc_em_s3");
  cfg.run_id = "custom";
  CHECK(cfg.resolved_run_id() == "custom");
}

TEST_CASE("train_config mirrors the federation and concept blocks") {
  auto cfg = tiny_config();
  cfg.federation.lr = 0.02;
  cfg.concepts.iota = 0.3;
  cfg.concepts.gamma = 0.7;
  auto tc = cfg.train_config();
  CHECK(tc.rounds == 3);
  CHECK(tc.lr0 == 0.02);
  CHECK(tc.iota == 0.3);
  CHECK(tc.gamma == 0.7);
  CHECK(tc.cohort == 4);
}

TEST_CASE("build_experiment wires dataset, partition, and server together") {
  auto cfg = tiny_config();
  auto built = build_experiment(cfg);
  CHECK(built.data.n == 600);
  CHECK(built.partition.clients.size() == 9);
  CHECK(built.arch.input_dim == built.data.input_dim);
  CHECK(built.arch.embed_dim == 4);
  CHECK(built.server.bank.num_concepts == 4);
  CHECK(built.server.strategy == Strategy::kFedVcEm);
  CHECK(built.server.clients.size() == 9);
}

TEST_CASE("run_experiment produces the full output bundle") {
  TempDir dir("bundle");
  auto cfg = tiny_config();
  cfg.federation.ckpt_every = 2;
  auto result = run_experiment(cfg, dir.path.string());

  CHECK(result.rounds.size() == 3);
  CHECK(result.final_eval.size() == 2 * 9);
  CHECK(result.records.size() == 3 * 2 * 9);
  CHECK(result.ari >= -1.0);
  CHECK(result.ari <= 1.0);

  for (const char* name : {"metrics.csv", "config.resolved.json", "summary.txt", "summary.csv",
                           "projections.csv", "round_final.ckpt", "round_2.ckpt", "DONE"})
    CHECK_MESSAGE(fs::exists(dir.path / name), name);
  CHECK(!fs::exists(dir.path / "round_1.ckpt"));
  CHECK(!fs::exists(dir.path / "round_3.ckpt"));

  // The checkpoint carries the concept state next to the weights.
  auto snap = load_params_file((dir.path / "round_final.ckpt").string());
  auto names = snap.names();
  CHECK(std::find(names.begin(), names.end(), "vc.concepts") != names.end());
  bool has_weight = false;
  for (const auto& n : names) has_weight = has_weight || n.rfind("vc.", 0) != 0;
  CHECK(has_weight);

  auto summary = slurp(dir.path / "summary.txt");
  CHECK(summary.find("tr-clients") != std::string::npos);
  CHECK(summary.find("ts-clients") != std::string::npos);

  // The resolved config reparses to the same run.
  auto re = parse_config_json(slurp(dir.path / "config.resolved.json"));
  CHECK(config_to_json(re) == config_to_json(cfg));

  // The metrics file round-trips through the reader.
  auto recs = read_metrics_csv((dir.path / "metrics.csv").string());
  CHECK(recs.size() == result.records.size());
}

TEST_CASE("plain strategies skip the projections file") {
  TempDir dir("plain");
  auto cfg = tiny_config();
  cfg.strategy = "fedavg";
  run_experiment(cfg, dir.path.string());
  CHECK(fs::exists(dir.path / "metrics.csv"));
  CHECK(!fs::exists(dir.path / "projections.csv"));
}

TEST_CASE("reruns write byte-identical outputs") {
  TempDir a("rerun_a");
  TempDir b("rerun_b");
  auto cfg = tiny_config();
  run_experiment(cfg, a.path.string());
  run_experiment(cfg, b.path.string());
  CHECK(slurp(a.path / "metrics.csv") == slurp(b.path / "metrics.csv"));
  CHECK(slurp(a.path / "summary.csv") == slurp(b.path / "summary.csv"));
  CHECK(slurp(a.path / "projections.csv") == slurp(b.path / "projections.csv"));
  CHECK(slurp(a.path / "round_final.ckpt") == slurp(b.path / "round_final.ckpt"));
}

TEST_CASE("eval_every zero evaluates only the final round") {
  TempDir dir("lasteval");
  auto cfg = tiny_config();
  cfg.federation.eval_every = 0;
  auto result = run_experiment(cfg, dir.path.string());
  CHECK(result.records.size() == result.final_eval.size());
  CHECK(result.final_eval.size() == 2 * 9);
}

TEST_CASE("summarize splits roles over local-test records") {
  std::vector<MetricsRecord> recs;
  auto add = [&](const char* role, const char* split, double acc) {
    MetricsRecord r;
    r.strategy = "x";
    r.role = role;
    r.split = split;
    r.accuracy = acc;
    r.weighted_auc = acc;
    r.weighted_f1 = acc;
    recs.push_back(r);
  };
  add("train", "local-test", 0.8);
  add("train", "local-test", 0.6);
  add("train", "local-train", 0.99);  // ignored
  add("heldout", "local-test", 0.5);

  auto rows = summarize(recs);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].role == "train");
  CHECK(rows[0].clients == 2);
  CHECK(rows[0].acc_mean == doctest::Approx(0.7));
  CHECK(rows[0].acc_std == doctest::Approx(0.1));
  CHECK(rows[1].role == "heldout");
  CHECK(rows[1].clients == 1);
  CHECK(rows[1].acc_mean == doctest::Approx(0.5));
  CHECK(rows[1].acc_std == doctest::Approx(0.0));

  auto table = summary_table(rows);
  CHECK(table.find("tr-clients") != std::string::npos);
  CHECK(table.find("ts-clients") != std::string::npos);
}

TEST_CASE("config file parsing reports missing files") {
  CHECK_THROWS_WITH_AS(parse_config_file("definitely_missing.json"), doctest::Contains("cannot open"),
                       std::runtime_error);
  fs::create_directories("t_exp");
  {
    std::ofstream f("t_exp/cfg.json");
    f << R"({"seed": 9, "federation": {"rounds": 2}})";
  }
  auto cfg = parse_config_file("t_exp/cfg.json");
  CHECK(cfg.seed == 9);
  CHECK(cfg.federation.rounds == 2);
  fs::remove("t_exp/cfg.json");
}
