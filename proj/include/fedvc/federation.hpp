#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedvc/concepts.hpp"
#include "fedvc/data.hpp"
#include "fedvc/metrics.hpp"
#include "fedvc/model.hpp"
#include "fedvc/params.hpp"
#include "fedvc/rng.hpp"

namespace fedvc {

enum class Strategy { kLocalOnly, kFedAvg, kFedAvgFt, kFedProx, kFedVcEm, kFedVcUnified };

Strategy parse_strategy(const std::string& name);
std::string strategy_name(Strategy s);
bool is_fedvc(Strategy s);

struct TrainConfig {
  int rounds = 50;
  int epochs = 2;
  int batch_size = 10;
  int cohort = 10;
  double lr0 = 0.005;
  double decay = 0.8;
  int decay_every = 10;
  double prox_mu = 0.01;
  int finetune_epochs = 1;
  double iota = 0.1;
  double kappa = 0.05;
  double gamma = 0.1;
  double drop_prob = 0.0;
  bool concept_kmeanspp = false;

  double lr_at(int round) const;
  void validate() const;
};

struct ClientRuntime {
  ClientInfo info;
  StreamStats stats;
  ParamSet local_model;  // local_only strategy
  // Updates applied to this client's persistent state; must stay 0 for
  // held-out clients.
  long state_updates = 0;
};

struct ServerState {
  Strategy strategy = Strategy::kFedAvg;
  ParamSet omega;
  ConceptBank bank;
  int round = 0;
  uint64_t seed = 0;
  ArchConfig arch;
  std::vector<ClientRuntime> clients;
  std::vector<std::pair<int, std::vector<double>>> last_cohort_upsilons;
};

ServerState init_server(Strategy strategy, const ArchConfig& arch, const ClientPartition& partition,
                        const TrainConfig& cfg, int num_concepts, int concept_dim, uint64_t seed);

// Uniform sample without replacement from the participant population.
std::vector<int> sample_clients(const std::vector<int>& participants, int cohort, Rng& rng);

// Alias for the weighted parameter mean used at every round barrier.
ParamSet aggregate_params(const std::vector<std::pair<const ParamSet*, double>>& updates);

// Messages allowed on the simulated wire. Nothing else crosses between
// clients and server.
struct UploadEm {
  ParamSet omega;
  StreamStats stats;
};
struct UploadUnified {
  ParamSet omega;
  TensorT<double> concepts;
};
struct UploadPlain {
  ParamSet omega;
};

// One client's local pass for the EM-mode method: refresh upsilon and the
// preference from current statistics, then E epochs of SGD on l_p + l_cls
// with concepts frozen, updating the streaming statistics after each batch.
UploadEm client_update_em(const ParamSet& omega, const ConceptBank& bank, const ArchConfig& arch,
                          ClientRuntime& client, const Dataset& ds, const TrainConfig& cfg, double lr,
                          uint64_t round_seed);

// Unified variant: E epochs of SGD on the joint objective, updating both the
// local weights and a local concept copy.
UploadUnified client_update_unified(const ParamSet& omega, const ConceptBank& bank,
                                    const ArchConfig& arch, ClientRuntime& client, const Dataset& ds,
                                    const TrainConfig& cfg, double lr, uint64_t round_seed);

// Baselines: plain l_cls SGD, optionally with the FedProx proximal pull
// toward the broadcast weights (prox_mu 0 disables it exactly).
UploadPlain client_update_plain(const ParamSet& omega, const ArchConfig& arch, ClientRuntime& client,
                                const Dataset& ds, const TrainConfig& cfg, double lr,
                                uint64_t round_seed, double prox_mu);

struct RoundReport {
  int round = 0;
  std::vector<int> cohort;
  uint64_t bytes_down = 0;
  uint64_t bytes_up = 0;
  double wall_ms = 0.0;
  double mean_first_batch_loss = 0.0;
  double mean_last_batch_loss = 0.0;
  bool aborted = false;
};

// One synchronized round of the configured strategy. Cohort clients run
// independently (OpenMP across clients); the server merges in client-id order
// after the barrier.
RoundReport run_round(ServerState& server, const Dataset& ds, const TrainConfig& cfg);

// Metrics for every client on its local splits. FedVC strategies deploy the
// global model directly; fedavg_ft fine-tunes a throwaway copy on the local
// train split first; local_only evaluates each client's own model.
std::vector<MetricsRecord> evaluate_global(const ServerState& server, const Dataset& ds,
                                           const TrainConfig& cfg, const std::string& run_id);

// Per-sample points for interpretability analysis over local-test samples of
// every client: estimated preferences for FedVC strategies, trunk activations
// otherwise. Group label is the per-sample domain when the dataset has one,
// else the client's group.
struct EvalPoints {
  TensorT<double> points;
  std::vector<int> sample_ids;
  std::vector<int> groups;
};
EvalPoints collect_eval_points(const ServerState& server, const Dataset& ds);

// Throws if a held-out client ever accumulated persistent state updates.
void assert_heldout_hygiene(const ServerState& server);

}  // namespace fedvc
