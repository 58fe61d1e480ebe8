#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedvc/data.hpp"
#include "fedvc/federation.hpp"
#include "fedvc/model.hpp"

namespace fedvc {

struct DatasetConfig {
  std::string type = "synth_gmm";  // or "idx"
  // synth_gmm
  int classes = 4;
  int clusters_per_class = 1;
  int dim = 2;
  double separation = 6.0;
  int samples = 2000;
  // idx
  std::string idx_images;
  std::string idx_labels;
  int per_class_limit = 0;  // 0 keeps everything
};

struct ConceptConfig {
  int num = 10;
  int dim = 10;
  double iota = 0.1;
  double kappa = 0.05;
  double gamma = 0.1;
  bool kmeanspp = false;
};

struct FederationConfig {
  int rounds = 50;
  int epochs = 2;
  int batch_size = 10;
  int cohort = 10;
  double lr = 0.005;
  double decay = 0.8;
  int decay_every = 10;
  double prox_mu = 0.01;
  int finetune_epochs = 1;
  double drop_prob = 0.0;
  int eval_every = 1;
  int ckpt_every = 0;  // 0 writes only the final checkpoint
};

struct ExperimentConfig {
  std::string run_id;  // derived from strategy and seed when empty
  uint64_t seed = 1;
  std::string out = "runs/out";
  std::string strategy = "fedvc_em";
  DatasetConfig dataset;
  ShiftConfig partition;
  std::vector<int> hidden_dims = {64, 64};
  ConceptConfig concepts;
  FederationConfig federation;

  void validate() const;
  std::string resolved_run_id() const;
  TrainConfig train_config() const;
};

// Strict parser: unknown keys, type mismatches, and constraint violations are
// errors naming the offending key. Missing keys take the defaults above.
ExperimentConfig parse_config_file(const std::string& path);
ExperimentConfig parse_config_json(const std::string& text);

// Dotted-path override, e.g. "federation.rounds=30" or "concepts.iota=0.5".
void apply_override(ExperimentConfig& cfg, const std::string& key_value);

std::string config_to_json(const ExperimentConfig& cfg);

struct BuiltExperiment {
  Dataset data;
  ClientPartition partition;
  ArchConfig arch;
  ServerState server;
};

// Dataset + partition + initialized server from a resolved config.
BuiltExperiment build_experiment(const ExperimentConfig& cfg);

struct RunResult {
  std::vector<MetricsRecord> records;    // every evaluated round
  std::vector<MetricsRecord> final_eval; // last round only
  std::vector<RoundReport> rounds;
  double ari = -2.0;  // preference/embedding cluster agreement at final round
};

// Full training run; when out_dir is nonempty writes metrics.csv,
// projections.csv (FedVC strategies), checkpoints, config.resolved.json,
// summary.txt/csv and the DONE sentinel there.
RunResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

struct SummaryRow {
  std::string strategy;
  std::string role;
  double acc_mean = 0.0, acc_std = 0.0;
  double auc_mean = 0.0, auc_std = 0.0;
  double f1_mean = 0.0, f1_std = 0.0;
  int clients = 0;
};

// Per-role mean and std over clients of final-round local-test metrics.
std::vector<SummaryRow> summarize(const std::vector<MetricsRecord>& final_eval);
std::string summary_table(const std::vector<SummaryRow>& rows);

}  // namespace fedvc
