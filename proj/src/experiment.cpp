#include "fedvc/experiment.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fedvc/kernels.hpp"

namespace fedvc {

using nlohmann::json;

void ExperimentConfig::validate() const {
  parse_strategy(strategy);
  if (dataset.type != "synth_gmm" && dataset.type != "idx")
    throw std::invalid_argument("config: dataset.type must be synth_gmm or idx");
  if (dataset.type == "idx" && (dataset.idx_images.empty() || dataset.idx_labels.empty()))
    throw std::invalid_argument("config: dataset.idx_images and dataset.idx_labels are required for idx data");
  partition.validate();
  if (hidden_dims.empty()) throw std::invalid_argument("config: hidden_dims must not be empty");
  if (concepts.num < 1) throw std::invalid_argument("config: concepts.num must be positive");
  if (concepts.dim < 1) throw std::invalid_argument("config: concepts.dim must be positive");
  train_config().validate();
}

std::string ExperimentConfig::resolved_run_id() const {
  if (!run_id.empty()) return run_id;
  return strategy + "_s" + std::to_string(seed);
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig tc;
  tc.rounds = federation.rounds;
  tc.epochs = federation.epochs;
  tc.batch_size = federation.batch_size;
  tc.cohort = federation.cohort;
  tc.lr0 = federation.lr;
  tc.decay = federation.decay;
  tc.decay_every = federation.decay_every;
  tc.prox_mu = federation.prox_mu;
  tc.finetune_epochs = federation.finetune_epochs;
  tc.drop_prob = federation.drop_prob;
  tc.iota = concepts.iota;
  tc.kappa = concepts.kappa;
  tc.gamma = concepts.gamma;
  tc.concept_kmeanspp = concepts.kmeanspp;
  return tc;
}

namespace {

json defaults_json() {
  json j;
  j["run_id"] = "";
  j["seed"] = 1;
  j["strategy"] = "fedvc_em";
  j["dataset"] = {{"type", "synth_gmm"},       {"classes", 4},      {"clusters_per_class", 1},
                  {"dim", 2},                  {"separation", 6.0}, {"samples", 2000},
                  {"idx_images", ""},          {"idx_labels", ""},  {"per_class_limit", 0}};
  j["partition"] = {{"mode", "target_shift"},
                    {"num_groups", 5},
                    {"train_groups", 3},
                    {"clients_per_group", 8},
                    {"alpha", 0.5},
                    {"local_test_fraction", 0.2},
                    {"shift_strength", 1.0},
                    {"heldout_clients_per_group", 1},
                    {"mixed_test_clients", 0}};
  j["hidden_dims"] = {64, 64};
  j["concepts"] = {{"num", 10}, {"dim", 10}, {"iota", 0.1},
                   {"kappa", 0.05}, {"gamma", 0.1}, {"kmeanspp", false}};
  j["federation"] = {{"rounds", 50},   {"epochs", 2},          {"batch_size", 10},
                     {"cohort", 10},   {"lr", 0.005},          {"decay", 0.8},
                     {"decay_every", 10}, {"prox_mu", 0.01},   {"finetune_epochs", 1},
                     {"drop_prob", 0.0},  {"eval_every", 1},   {"ckpt_every", 0}};
  return j;
}

void reject_unknown_keys(const json& value, const json& schema, const std::string& prefix) {
  if (!value.is_object()) return;
  for (const auto& [key, sub] : value.items()) {
    std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!schema.contains(key)) throw std::invalid_argument("config: unknown key " + path);
    if (schema.at(key).is_object()) reject_unknown_keys(sub, schema.at(key), path);
  }
}

template <typename T>
void take(const json& j, const char* key, T& out, const std::string& prefix) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument("config: type mismatch at " +
                                (prefix.empty() ? std::string(key) : prefix + "." + std::string(key)));
  }
}

ExperimentConfig from_json(const json& j) {
  reject_unknown_keys(j, defaults_json(), "");
  ExperimentConfig cfg;
  take(j, "run_id", cfg.run_id, "");
  take(j, "seed", cfg.seed, "");
  take(j, "strategy", cfg.strategy, "");
  take(j, "hidden_dims", cfg.hidden_dims, "");
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    take(d, "type", cfg.dataset.type, "dataset");
    take(d, "classes", cfg.dataset.classes, "dataset");
    take(d, "clusters_per_class", cfg.dataset.clusters_per_class, "dataset");
    take(d, "dim", cfg.dataset.dim, "dataset");
    take(d, "separation", cfg.dataset.separation, "dataset");
    take(d, "samples", cfg.dataset.samples, "dataset");
    take(d, "idx_images", cfg.dataset.idx_images, "dataset");
    take(d, "idx_labels", cfg.dataset.idx_labels, "dataset");
    take(d, "per_class_limit", cfg.dataset.per_class_limit, "dataset");
  }
  if (j.contains("partition")) {
    const json& p = j.at("partition");
    std::string mode = "target_shift";
    take(p, "mode", mode, "partition");
    if (mode == "target_shift")
      cfg.partition.mode = ShiftMode::kTargetShift;
    else if (mode == "feature_shift")
      cfg.partition.mode = ShiftMode::kFeatureShift;
    else
      throw std::invalid_argument("config: partition.mode must be target_shift or feature_shift");
    take(p, "num_groups", cfg.partition.num_groups, "partition");
    take(p, "train_groups", cfg.partition.train_groups, "partition");
    take(p, "clients_per_group", cfg.partition.clients_per_group, "partition");
    take(p, "alpha", cfg.partition.alpha, "partition");
    take(p, "local_test_fraction", cfg.partition.local_test_fraction, "partition");
    take(p, "shift_strength", cfg.partition.shift_strength, "partition");
    take(p, "heldout_clients_per_group", cfg.partition.heldout_clients_per_group, "partition");
    take(p, "mixed_test_clients", cfg.partition.mixed_test_clients, "partition");
  }
  if (j.contains("concepts")) {
    const json& c = j.at("concepts");
    take(c, "num", cfg.concepts.num, "concepts");
    take(c, "dim", cfg.concepts.dim, "concepts");
    take(c, "iota", cfg.concepts.iota, "concepts");
    take(c, "kappa", cfg.concepts.kappa, "concepts");
    take(c, "gamma", cfg.concepts.gamma, "concepts");
    take(c, "kmeanspp", cfg.concepts.kmeanspp, "concepts");
  }
  if (j.contains("federation")) {
    const json& f = j.at("federation");
    take(f, "rounds", cfg.federation.rounds, "federation");
    take(f, "epochs", cfg.federation.epochs, "federation");
    take(f, "batch_size", cfg.federation.batch_size, "federation");
    take(f, "cohort", cfg.federation.cohort, "federation");
    take(f, "lr", cfg.federation.lr, "federation");
    take(f, "decay", cfg.federation.decay, "federation");
    take(f, "decay_every", cfg.federation.decay_every, "federation");
    take(f, "prox_mu", cfg.federation.prox_mu, "federation");
    take(f, "finetune_epochs", cfg.federation.finetune_epochs, "federation");
    take(f, "drop_prob", cfg.federation.drop_prob, "federation");
    take(f, "eval_every", cfg.federation.eval_every, "federation");
    take(f, "ckpt_every", cfg.federation.ckpt_every, "federation");
  }
  return cfg;
}

json to_json(const ExperimentConfig& cfg) {
  json j = defaults_json();
  j["run_id"] = cfg.run_id;
  j["seed"] = cfg.seed;
  j["strategy"] = cfg.strategy;
  j["hidden_dims"] = cfg.hidden_dims;
  j["dataset"]["type"] = cfg.dataset.type;
  j["dataset"]["classes"] = cfg.dataset.classes;
  j["dataset"]["clusters_per_class"] = cfg.dataset.clusters_per_class;
  j["dataset"]["dim"] = cfg.dataset.dim;
  j["dataset"]["separation"] = cfg.dataset.separation;
  j["dataset"]["samples"] = cfg.dataset.samples;
  j["dataset"]["idx_images"] = cfg.dataset.idx_images;
  j["dataset"]["idx_labels"] = cfg.dataset.idx_labels;
  j["dataset"]["per_class_limit"] = cfg.dataset.per_class_limit;
  j["partition"]["mode"] = cfg.partition.mode == ShiftMode::kTargetShift ? "target_shift" : "feature_shift";
  j["partition"]["num_groups"] = cfg.partition.num_groups;
  j["partition"]["train_groups"] = cfg.partition.train_groups;
  j["partition"]["clients_per_group"] = cfg.partition.clients_per_group;
  j["partition"]["alpha"] = cfg.partition.alpha;
  j["partition"]["local_test_fraction"] = cfg.partition.local_test_fraction;
  j["partition"]["shift_strength"] = cfg.partition.shift_strength;
  j["partition"]["heldout_clients_per_group"] = cfg.partition.heldout_clients_per_group;
  j["partition"]["mixed_test_clients"] = cfg.partition.mixed_test_clients;
  j["concepts"]["num"] = cfg.concepts.num;
  j["concepts"]["dim"] = cfg.concepts.dim;
  j["concepts"]["iota"] = cfg.concepts.iota;
  j["concepts"]["kappa"] = cfg.concepts.kappa;
  j["concepts"]["gamma"] = cfg.concepts.gamma;
  j["concepts"]["kmeanspp"] = cfg.concepts.kmeanspp;
  j["federation"]["rounds"] = cfg.federation.rounds;
  j["federation"]["epochs"] = cfg.federation.epochs;
  j["federation"]["batch_size"] = cfg.federation.batch_size;
  j["federation"]["cohort"] = cfg.federation.cohort;
  j["federation"]["lr"] = cfg.federation.lr;
  j["federation"]["decay"] = cfg.federation.decay;
  j["federation"]["decay_every"] = cfg.federation.decay_every;
  j["federation"]["prox_mu"] = cfg.federation.prox_mu;
  j["federation"]["finetune_epochs"] = cfg.federation.finetune_epochs;
  j["federation"]["drop_prob"] = cfg.federation.drop_prob;
  j["federation"]["eval_every"] = cfg.federation.eval_every;
  j["federation"]["ckpt_every"] = cfg.federation.ckpt_every;
  return j;
}

}  // namespace

ExperimentConfig parse_config_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  return from_json(j);
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_config_json(buf.str());
}

void apply_override(ExperimentConfig& cfg, const std::string& key_value) {
  auto eq = key_value.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("override must look like key.path=value: " + key_value);
  std::string path = key_value.substr(0, eq);
  std::string raw = key_value.substr(eq + 1);

  json j = to_json(cfg);
  json* node = &j;
  size_t at = 0;
  std::vector<std::string> parts;
  while (at != std::string::npos) {
    size_t dot = path.find('.', at);
    parts.push_back(path.substr(at, dot == std::string::npos ? std::string::npos : dot - at));
    at = dot == std::string::npos ? std::string::npos : dot + 1;
  }
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i])) throw std::invalid_argument("config: unknown key " + path);
    node = &node->at(parts[i]);
  }
  const std::string& leaf = parts.back();
  if (!node->contains(leaf)) throw std::invalid_argument("config: unknown key " + path);

  json parsed;
  try {
    parsed = json::parse(raw);
  } catch (const json::exception&) {
    parsed = raw;  // bare strings stay strings
  }
  (*node)[leaf] = parsed;
  cfg = from_json(j);
}

std::string config_to_json(const ExperimentConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

BuiltExperiment build_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  BuiltExperiment built;

  uint64_t data_seed = derive_seed(cfg.seed, 0xda);
  if (cfg.dataset.type == "synth_gmm") {
    SynthSpec spec;
    spec.num_classes = cfg.dataset.classes;
    spec.clusters_per_class = cfg.dataset.clusters_per_class;
    spec.dim = cfg.dataset.dim;
    spec.separation = cfg.dataset.separation;
    spec.samples = cfg.dataset.samples;
    built.data = synth_gmm_dataset(spec, data_seed).data;
  } else {
    built.data = load_idx(cfg.dataset.idx_images, cfg.dataset.idx_labels);
    if (cfg.dataset.per_class_limit > 0)
      built.data = subsample_per_class(built.data, cfg.dataset.per_class_limit, data_seed);
  }

  uint64_t part_seed = derive_seed(cfg.seed, 0x9a);
  if (cfg.partition.mode == ShiftMode::kTargetShift) {
    built.partition = dirichlet_label_partition(built.data, cfg.partition, part_seed);
  } else {
    auto shifted = feature_shift_partition(built.data, cfg.partition, part_seed);
    built.data = std::move(shifted.data);
    built.partition = std::move(shifted.partition);
  }

  built.arch.input_dim = built.data.input_dim;
  built.arch.hidden_dims = cfg.hidden_dims;
  built.arch.num_classes = built.data.num_classes;
  built.arch.embed_dim = cfg.concepts.dim;

  built.server = init_server(parse_strategy(cfg.strategy), built.arch, built.partition,
                             cfg.train_config(), cfg.concepts.num, cfg.concepts.dim, cfg.seed);
  return built;
}

std::vector<SummaryRow> summarize(const std::vector<MetricsRecord>& final_eval) {
  std::vector<SummaryRow> rows;
  for (const char* role : {"train", "heldout"}) {
    SummaryRow row;
    row.role = role;
    std::vector<double> acc, auc, f1;
    for (const auto& r : final_eval) {
      if (r.split != "local-test" || r.role != role) continue;
      row.strategy = r.strategy;
      acc.push_back(r.accuracy);
      auc.push_back(r.weighted_auc);
      f1.push_back(r.weighted_f1);
    }
    if (acc.empty()) continue;
    auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
      mean = 0.0;
      for (double x : v) mean += x;
      mean /= v.size();
      double var = 0.0;
      for (double x : v) var += (x - mean) * (x - mean);
      sd = std::sqrt(var / v.size());
    };
    mean_std(acc, row.acc_mean, row.acc_std);
    mean_std(auc, row.auc_mean, row.auc_std);
    mean_std(f1, row.f1_mean, row.f1_std);
    row.clients = (int)acc.size();
    rows.push_back(row);
  }
  return rows;
}

std::string summary_table(const std::vector<SummaryRow>& rows) {
  std::ostringstream out;
  char line[256];
  out << "role        clients  accuracy          w.AUC             w.F1\n";
  for (const auto& r : rows) {
    const char* label = r.role == "train" ? "tr-clients" : "ts-clients";
    std::snprintf(line, sizeof(line), "%-11s %7d  %.4f (%.4f)   %.4f (%.4f)   %.4f (%.4f)\n", label,
                  r.clients, r.acc_mean, r.acc_std, r.auc_mean, r.auc_std, r.f1_mean, r.f1_std);
    out << line;
  }
  return out.str();
}

RunResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  namespace fs = std::filesystem;
  cfg.validate();
  if (const char* env = std::getenv("FEDVC_THREADS")) {
    int cap = std::atoi(env);
    if (cap > 0) kern::set_thread_cap(cap);
  }

  BuiltExperiment built = build_experiment(cfg);
  ServerState& server = built.server;
  TrainConfig tc = cfg.train_config();
  std::string run_id = cfg.resolved_run_id();

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream rc(fs::path(out_dir) / "config.resolved.json");
    rc << config_to_json(cfg);
  }

  RunResult result;
  bool fedvc = is_fedvc(server.strategy);
  for (int r = 0; r < tc.rounds; ++r) {
    RoundReport report = run_round(server, built.data, tc);
    result.rounds.push_back(report);
    bool last = r + 1 == tc.rounds;
    if (last || (cfg.federation.eval_every > 0 && (r + 1) % cfg.federation.eval_every == 0)) {
      auto records = evaluate_global(server, built.data, tc, run_id);
      result.records.insert(result.records.end(), records.begin(), records.end());
      if (last) result.final_eval = records;
    }
    if (!out_dir.empty() && cfg.federation.ckpt_every > 0 && (r + 1) % cfg.federation.ckpt_every == 0) {
      ParamSet snap = server.omega;
      if (fedvc) bank_to_params(server.bank, server.last_cohort_upsilons, snap);
      save_params_file(snap, (fs::path(out_dir) / ("round_" + std::to_string(r + 1) + ".ckpt")).string());
    }
  }
  assert_heldout_hygiene(server);

  EvalPoints points = collect_eval_points(server, built.data);
  std::set<int> distinct(points.groups.begin(), points.groups.end());
  if (distinct.size() >= 2 && points.points.shape[0] > (int)distinct.size())
    result.ari = preference_cluster_agreement(points.points, points.groups, derive_seed(cfg.seed, 0xa8));

  if (!out_dir.empty()) {
    write_metrics_csv((fs::path(out_dir) / "metrics.csv").string(), result.records);
    if (fedvc) {
      TensorT<double> proj = project_preferences(points.points);
      std::vector<ProjectionRow> rows(points.sample_ids.size());
      for (size_t i = 0; i < points.sample_ids.size(); ++i) {
        rows[i].run_id = run_id;
        rows[i].round = server.round;
        rows[i].sample_id = points.sample_ids[i];
        rows[i].group_id = points.groups[i];
        rows[i].x = proj.at((int)i, 0);
        rows[i].y = proj.at((int)i, 1);
      }
      write_projections_csv((fs::path(out_dir) / "projections.csv").string(), rows);
    }
    ParamSet snap = server.omega;
    if (fedvc) bank_to_params(server.bank, server.last_cohort_upsilons, snap);
    save_params_file(snap, (fs::path(out_dir) / "round_final.ckpt").string());

    auto rows = summarize(result.final_eval);
    std::string table = summary_table(rows);
    std::ofstream st(fs::path(out_dir) / "summary.txt");
    st << "run " << run_id << " strategy " << cfg.strategy << " seed " << cfg.seed << "\n" << table;
    std::ofstream sc(fs::path(out_dir) / "summary.csv");
    sc << "strategy,role,clients,acc_mean,acc_std,auc_mean,auc_std,f1_mean,f1_std,ari\n";
    for (const auto& r : rows)
      sc << cfg.strategy << ',' << r.role << ',' << r.clients << ',' << format_double(r.acc_mean) << ','
         << format_double(r.acc_std) << ',' << format_double(r.auc_mean) << ','
         << format_double(r.auc_std) << ',' << format_double(r.f1_mean) << ','
         << format_double(r.f1_std) << ',' << format_double(result.ari) << '\n';
    std::ofstream done(fs::path(out_dir) / "DONE");
    done << "ok\n";
  }
  return result;
}

}  // namespace fedvc
