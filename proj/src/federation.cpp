#include "fedvc/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "fedvc/kernels.hpp"
#include "fedvc/losses.hpp"

namespace fedvc {

Strategy parse_strategy(const std::string& name) {
  if (name == "local_only") return Strategy::kLocalOnly;
  if (name == "fedavg") return Strategy::kFedAvg;
  if (name == "fedavg_ft") return Strategy::kFedAvgFt;
  if (name == "fedprox") return Strategy::kFedProx;
  if (name == "fedvc_em") return Strategy::kFedVcEm;
  if (name == "fedvc_unified") return Strategy::kFedVcUnified;
  throw std::invalid_argument("unknown strategy: " + name);
}

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kLocalOnly: return "local_only";
    case Strategy::kFedAvg: return "fedavg";
    case Strategy::kFedAvgFt: return "fedavg_ft";
    case Strategy::kFedProx: return "fedprox";
    case Strategy::kFedVcEm: return "fedvc_em";
    case Strategy::kFedVcUnified: return "fedvc_unified";
  }
  throw std::logic_error("strategy_name: bad enum");
}

bool is_fedvc(Strategy s) { return s == Strategy::kFedVcEm || s == Strategy::kFedVcUnified; }

double TrainConfig::lr_at(int round) const {
  return lr0 * std::pow(decay, double(round / decay_every));
}

void TrainConfig::validate() const {
  if (rounds < 1) throw std::invalid_argument("TrainConfig: rounds must be positive");
  if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be nonnegative");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be positive");
  if (cohort < 1) throw std::invalid_argument("TrainConfig: cohort must be positive");
  if (!(lr0 > 0.0)) throw std::invalid_argument("TrainConfig: lr must be positive");
  if (!(decay > 0.0 && decay <= 1.0)) throw std::invalid_argument("TrainConfig: decay must lie in (0, 1]");
  if (decay_every < 1) throw std::invalid_argument("TrainConfig: decay_every must be positive");
  if (prox_mu < 0.0) throw std::invalid_argument("TrainConfig: prox_mu must be nonnegative");
  if (finetune_epochs < 0) throw std::invalid_argument("TrainConfig: finetune_epochs must be nonnegative");
  if (!(iota > 0.0)) throw std::invalid_argument("TrainConfig: iota must be positive");
  if (!(kappa > 0.0 && kappa < 1.0)) throw std::invalid_argument("TrainConfig: kappa must lie in (0, 1)");
  if (gamma < 0.0) throw std::invalid_argument("TrainConfig: gamma must be nonnegative");
  if (drop_prob < 0.0 || drop_prob >= 1.0)
    throw std::invalid_argument("TrainConfig: drop_prob must lie in [0, 1)");
}

ServerState init_server(Strategy strategy, const ArchConfig& arch, const ClientPartition& partition,
                        const TrainConfig& cfg, int num_concepts, int concept_dim, uint64_t seed) {
  cfg.validate();
  arch.validate();
  if (arch.embed_dim != concept_dim)
    throw std::invalid_argument("init_server: projection head width must equal concept dim");
  ServerState server;
  server.strategy = strategy;
  server.seed = seed;
  server.arch = arch;
  server.omega = init_model(arch, derive_seed(seed, 0x0d));
  server.bank = init_concept_bank(num_concepts, concept_dim, cfg.iota, derive_seed(seed, 0x0c));
  server.clients.reserve(partition.clients.size());
  for (const auto& info : partition.clients) {
    ClientRuntime rt;
    rt.info = info;
    rt.stats = init_stream_stats(server.bank, cfg.kappa);
    if (strategy == Strategy::kLocalOnly) rt.local_model = server.omega;
    server.clients.push_back(std::move(rt));
  }
  return server;
}

std::vector<int> sample_clients(const std::vector<int>& participants, int cohort, Rng& rng) {
  if (cohort > (int)participants.size())
    throw std::invalid_argument("sample_clients: cohort exceeds population");
  std::vector<int> picks = rng.sample_without_replacement((int)participants.size(), cohort);
  std::vector<int> out(cohort);
  for (int i = 0; i < cohort; ++i) out[i] = participants[picks[i]];
  std::sort(out.begin(), out.end());
  return out;
}

ParamSet aggregate_params(const std::vector<std::pair<const ParamSet*, double>>& updates) {
  ParamSet merged = weighted_average(updates);
  for (const auto& [name, t] : merged)
    for (float v : t.data)
      if (!std::isfinite(v)) throw std::runtime_error("aggregate_params: non-finite aggregate in " + name);
  return merged;
}

namespace {

struct Batch {
  Tensor x;
  std::vector<int> labels;
};

Batch gather(const Dataset& ds, const std::vector<int>& order, size_t begin, size_t end) {
  Batch b;
  int n = (int)(end - begin);
  b.x = Tensor({n, ds.input_dim});
  b.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    int idx = order[begin + i];
    std::copy(ds.row(idx), ds.row(idx) + ds.input_dim, b.x.data.begin() + (size_t)i * ds.input_dim);
    b.labels[i] = ds.labels[idx];
  }
  return b;
}

struct EpochPlan {
  std::vector<int> order;
  std::vector<std::pair<size_t, size_t>> batches;
};

EpochPlan plan_epoch(const std::vector<int>& indices, int batch_size, Rng& rng) {
  EpochPlan plan;
  plan.order = indices;
  rng.shuffle(plan.order);
  for (size_t at = 0; at < plan.order.size(); at += batch_size)
    plan.batches.push_back({at, std::min(plan.order.size(), at + (size_t)batch_size)});
  return plan;
}

struct LossTrace {
  double first = 0.0;
  double last = 0.0;
  bool any = false;
  void observe(double v) {
    if (!any) first = v;
    last = v;
    any = true;
  }
};

thread_local LossTrace* g_trace = nullptr;

void trace_loss(double v) {
  if (g_trace) g_trace->observe(v);
}

uint64_t stats_wire_bytes(const StreamStats& st) {
  return 8ull * (st.mass.size() + st.csum.size() + 1);
}

uint64_t concepts_wire_bytes(const ConceptBank& bank) {
  return 4ull * (uint64_t)bank.num_concepts * bank.dim;
}

}  // namespace

UploadEm client_update_em(const ParamSet& omega, const ConceptBank& bank, const ArchConfig& arch,
                          ClientRuntime& client, const Dataset& ds, const TrainConfig& cfg, double lr,
                          uint64_t round_seed) {
  if (client.info.train_idx.empty()) throw std::invalid_argument("client_update_em: empty local dataset");

  // Preference pass: refresh upsilon from the running statistics; the round's
  // preference target stays fixed while the weights move.
  std::vector<double> upsilon = finalize_upsilon(client.stats);
  std::vector<double> preference = client_preference(bank, upsilon);
  Tensor concepts_f = bank.concepts_f();

  UploadEm up;
  up.omega = omega;
  Rng rng(derive_seed(round_seed, 0xc1, client.info.id));
  for (int e = 0; e < cfg.epochs; ++e) {
    EpochPlan plan = plan_epoch(client.info.train_idx, cfg.batch_size, rng);
    for (const auto& [b0, b1] : plan.batches) {
      Batch batch = gather(ds, plan.order, b0, b1);
      Tape tape;
      auto bound = bind_model(tape, up.omega, true);
      auto out = forward_model(tape, bound, arch, tape.input(batch.x));
      Var cvar = tape.input(concepts_f, false);
      auto parts = em_mode_loss(tape, out, batch.labels, cvar, upsilon, cfg.iota, preference);
      tape.backward(parts.loss);
      sgd_step(up.omega, collect_grads(tape, bound), lr);
      trace_loss(tape.value(parts.loss).data[0]);

      accumulate_minibatch(client.stats, tape.value(parts.relevance).cast<double>(),
                           tape.value(out.embed).cast<double>());
      client.state_updates += 1;
    }
  }
  up.stats = client.stats;
  return up;
}

UploadUnified client_update_unified(const ParamSet& omega, const ConceptBank& bank,
                                    const ArchConfig& arch, ClientRuntime& client, const Dataset& ds,
                                    const TrainConfig& cfg, double lr, uint64_t round_seed) {
  if (client.info.train_idx.empty())
    throw std::invalid_argument("client_update_unified: empty local dataset");

  std::vector<double> upsilon = finalize_upsilon(client.stats);

  UploadUnified up;
  up.omega = omega;
  up.concepts = bank.concepts;
  Rng rng(derive_seed(round_seed, 0xc2, client.info.id));
  for (int e = 0; e < cfg.epochs; ++e) {
    EpochPlan plan = plan_epoch(client.info.train_idx, cfg.batch_size, rng);
    for (const auto& [b0, b1] : plan.batches) {
      Batch batch = gather(ds, plan.order, b0, b1);
      Tape tape;
      auto bound = bind_model(tape, up.omega, true);
      auto out = forward_model(tape, bound, arch, tape.input(batch.x));
      Var cvar = tape.input(up.concepts.cast<float>(), true);
      auto parts = unified_loss(tape, out, batch.labels, cvar, upsilon, cfg.iota, cfg.gamma);
      tape.backward(parts.loss);
      sgd_step(up.omega, collect_grads(tape, bound), lr);
      const auto& cg = tape.grad(cvar);
      for (size_t i = 0; i < up.concepts.data.size(); ++i)
        up.concepts.data[i] -= lr * double(cg.data[i]);
      trace_loss(tape.value(parts.loss).data[0]);

      accumulate_minibatch(client.stats, tape.value(parts.relevance).cast<double>(),
                           tape.value(out.embed).cast<double>());
      client.state_updates += 1;
    }
  }
  return up;
}

UploadPlain client_update_plain(const ParamSet& omega, const ArchConfig& arch, ClientRuntime& client,
                                const Dataset& ds, const TrainConfig& cfg, double lr,
                                uint64_t round_seed, double prox_mu) {
  if (client.info.train_idx.empty())
    throw std::invalid_argument("client_update_plain: empty local dataset");

  UploadPlain up;
  up.omega = omega;
  Rng rng(derive_seed(round_seed, 0xc3, client.info.id));
  for (int e = 0; e < cfg.epochs; ++e) {
    EpochPlan plan = plan_epoch(client.info.train_idx, cfg.batch_size, rng);
    for (const auto& [b0, b1] : plan.batches) {
      Batch batch = gather(ds, plan.order, b0, b1);
      Tape tape;
      auto bound = bind_model(tape, up.omega, true);
      auto out = forward_model(tape, bound, arch, tape.input(batch.x));
      Var loss = tape.cross_entropy(out.logits, batch.labels);
      tape.backward(loss);
      ParamSet grads = collect_grads(tape, bound);
      if (prox_mu > 0.0) {
        auto g = grads.begin();
        auto w = up.omega.begin();
        auto w0 = omega.begin();
        for (; g != grads.end(); ++g, ++w, ++w0)
          for (size_t i = 0; i < g->second.data.size(); ++i)
            g->second.data[i] += float(prox_mu) * (w->second.data[i] - w0->second.data[i]);
      }
      sgd_step(up.omega, grads, lr);
      trace_loss(tape.value(loss).data[0]);
      client.state_updates += 1;
    }
  }
  return up;
}

namespace {

// Local-only training mutates the client's own model and sends nothing.
void local_only_round(ClientRuntime& client, const ArchConfig& arch, const Dataset& ds,
                      const TrainConfig& cfg, double lr, uint64_t round_seed) {
  Rng rng(derive_seed(round_seed, 0xc4, client.info.id));
  for (int e = 0; e < cfg.epochs; ++e) {
    EpochPlan plan = plan_epoch(client.info.train_idx, cfg.batch_size, rng);
    for (const auto& [b0, b1] : plan.batches) {
      Batch batch = gather(ds, plan.order, b0, b1);
      Tape tape;
      auto bound = bind_model(tape, client.local_model, true);
      auto out = forward_model(tape, bound, arch, tape.input(batch.x));
      Var loss = tape.cross_entropy(out.logits, batch.labels);
      tape.backward(loss);
      sgd_step(client.local_model, collect_grads(tape, bound), lr);
      trace_loss(tape.value(loss).data[0]);
      client.state_updates += 1;
    }
  }
}

ParamSet finetuned_copy(const ParamSet& omega, const ArchConfig& arch, const ClientRuntime& client,
                        const Dataset& ds, const TrainConfig& cfg, double lr, uint64_t seed) {
  ParamSet model = omega;
  Rng rng(derive_seed(seed, 0xf7, client.info.id));
  for (int e = 0; e < cfg.finetune_epochs; ++e) {
    EpochPlan plan = plan_epoch(client.info.train_idx, cfg.batch_size, rng);
    for (const auto& [b0, b1] : plan.batches) {
      Batch batch = gather(ds, plan.order, b0, b1);
      Tape tape;
      auto bound = bind_model(tape, model, true);
      auto out = forward_model(tape, bound, arch, tape.input(batch.x));
      Var loss = tape.cross_entropy(out.logits, batch.labels);
      tape.backward(loss);
      sgd_step(model, collect_grads(tape, bound), lr);
    }
  }
  return model;
}

}  // namespace

RoundReport run_round(ServerState& server, const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  auto t0 = std::chrono::steady_clock::now();
  RoundReport report;
  report.round = server.round;
  double lr = cfg.lr_at(server.round);
  uint64_t round_seed = derive_seed(server.seed, 0x70, server.round);

  std::vector<int> participants;
  for (const auto& c : server.clients)
    if (c.info.role == ClientRole::kTrainParticipant) participants.push_back(c.info.id);
  Rng sampler(derive_seed(round_seed, 0x5a));
  std::vector<int> cohort = sample_clients(participants, std::min<int>(cfg.cohort, (int)participants.size()),
                                           sampler);
  if (cfg.drop_prob > 0.0) {
    Rng dropper(derive_seed(round_seed, 0xdd));
    std::vector<int> kept;
    for (int id : cohort)
      if (dropper.uniform() >= cfg.drop_prob) kept.push_back(id);
    cohort = std::move(kept);
  }
  if (cohort.empty()) {
    report.aborted = true;
    return report;
  }
  report.cohort = cohort;

  for (int id : cohort)
    if (server.clients[id].info.role != ClientRole::kTrainParticipant)
      throw std::logic_error("run_round: held-out client sampled into a training cohort");

  // Cohort weights over local train sizes.
  double total_n = 0.0;
  for (int id : cohort) total_n += (double)server.clients[id].info.train_idx.size();
  std::vector<double> alpha(cohort.size());
  for (size_t i = 0; i < cohort.size(); ++i)
    alpha[i] = server.clients[cohort[i]].info.train_idx.size() / total_n;
  double asum = 0.0;
  for (double a : alpha) asum += a;
  if (std::fabs(asum - 1.0) > 1e-9) throw std::logic_error("run_round: cohort weights do not sum to 1");

  uint64_t omega_bytes = serialized_size(server.omega);
  uint64_t concept_bytes = concepts_wire_bytes(server.bank);

  std::vector<UploadEm> em_ups(cohort.size());
  std::vector<UploadUnified> un_ups(cohort.size());
  std::vector<UploadPlain> plain_ups(cohort.size());
  std::vector<LossTrace> traces(cohort.size());

  int nthreads = kern::effective_threads();
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(nthreads)
#endif
  for (int i = 0; i < (int)cohort.size(); ++i) {
    ClientRuntime& client = server.clients[cohort[i]];
    g_trace = &traces[i];
    switch (server.strategy) {
      case Strategy::kLocalOnly:
        local_only_round(client, server.arch, ds, cfg, lr, round_seed);
        break;
      case Strategy::kFedAvg:
      case Strategy::kFedAvgFt:
        plain_ups[i] = client_update_plain(server.omega, server.arch, client, ds, cfg, lr, round_seed, 0.0);
        break;
      case Strategy::kFedProx:
        plain_ups[i] =
            client_update_plain(server.omega, server.arch, client, ds, cfg, lr, round_seed, cfg.prox_mu);
        break;
      case Strategy::kFedVcEm:
        em_ups[i] = client_update_em(server.omega, server.bank, server.arch, client, ds, cfg, lr, round_seed);
        break;
      case Strategy::kFedVcUnified:
        un_ups[i] =
            client_update_unified(server.omega, server.bank, server.arch, client, ds, cfg, lr, round_seed);
        break;
    }
    g_trace = nullptr;
  }

  // Merge at the barrier, in cohort (client-id) order.
  switch (server.strategy) {
    case Strategy::kLocalOnly:
      break;
    case Strategy::kFedAvg:
    case Strategy::kFedAvgFt:
    case Strategy::kFedProx: {
      std::vector<std::pair<const ParamSet*, double>> updates;
      for (size_t i = 0; i < cohort.size(); ++i) updates.push_back({&plain_ups[i].omega, alpha[i]});
      server.omega = aggregate_params(updates);
      report.bytes_down += cohort.size() * omega_bytes;
      for (size_t i = 0; i < cohort.size(); ++i) report.bytes_up += serialized_size(plain_ups[i].omega);
      break;
    }
    case Strategy::kFedVcEm: {
      std::vector<std::pair<const ParamSet*, double>> updates;
      std::vector<const StreamStats*> stats;
      for (size_t i = 0; i < cohort.size(); ++i) {
        updates.push_back({&em_ups[i].omega, alpha[i]});
        stats.push_back(&em_ups[i].stats);
      }
      server.omega = aggregate_params(updates);
      server.bank.concepts = merge_concepts(stats, server.bank);
      if (cfg.concept_kmeanspp && server.round == 0) {
        // Re-seed concepts from the first round's per-client concept
        // centroids; only statistics ever cross the wire.
        std::vector<std::vector<double>> rows;
        for (const StreamStats* st : stats)
          for (int m = 0; m < server.bank.num_concepts; ++m)
            if (st->mass[m] > kDeadMass) {
              std::vector<double> row(server.bank.dim);
              for (int t = 0; t < server.bank.dim; ++t)
                row[t] = st->csum[(size_t)m * server.bank.dim + t] / st->mass[m];
              rows.push_back(std::move(row));
            }
        if ((int)rows.size() >= server.bank.num_concepts) {
          TensorT<double> pts({(int)rows.size(), server.bank.dim});
          for (size_t r = 0; r < rows.size(); ++r)
            for (int t = 0; t < server.bank.dim; ++t) pts.at((int)r, t) = rows[r][t];
          server.bank.concepts =
              kmeanspp_select(pts, server.bank.num_concepts, derive_seed(server.seed, 0x6e));
        }
      }
      server.last_cohort_upsilons.clear();
      for (size_t i = 0; i < cohort.size(); ++i)
        server.last_cohort_upsilons.push_back({cohort[i], finalize_upsilon(em_ups[i].stats)});
      report.bytes_down += cohort.size() * (omega_bytes + concept_bytes);
      for (size_t i = 0; i < cohort.size(); ++i)
        report.bytes_up += serialized_size(em_ups[i].omega) + stats_wire_bytes(em_ups[i].stats);
      break;
    }
    case Strategy::kFedVcUnified: {
      std::vector<std::pair<const ParamSet*, double>> updates;
      for (size_t i = 0; i < cohort.size(); ++i) updates.push_back({&un_ups[i].omega, alpha[i]});
      server.omega = aggregate_params(updates);
      TensorT<double> merged({server.bank.num_concepts, server.bank.dim});
      for (size_t i = 0; i < cohort.size(); ++i)
        for (size_t t = 0; t < merged.data.size(); ++t)
          merged.data[t] += alpha[i] * un_ups[i].concepts.data[t];
      server.bank.concepts = std::move(merged);
      server.last_cohort_upsilons.clear();
      for (size_t i = 0; i < cohort.size(); ++i)
        server.last_cohort_upsilons.push_back(
            {cohort[i], finalize_upsilon(server.clients[cohort[i]].stats)});
      report.bytes_down += cohort.size() * (omega_bytes + concept_bytes);
      for (size_t i = 0; i < cohort.size(); ++i)
        report.bytes_up += serialized_size(un_ups[i].omega) + concepts_wire_bytes(server.bank);
      break;
    }
  }

  double first = 0.0, last = 0.0;
  int counted = 0;
  for (const auto& tr : traces)
    if (tr.any) {
      first += tr.first;
      last += tr.last;
      counted += 1;
    }
  if (counted > 0) {
    report.mean_first_batch_loss = first / counted;
    report.mean_last_batch_loss = last / counted;
  }

  server.round += 1;
  report.wall_ms =
      std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - t0)
          .count() /
      1000.0;
  return report;
}

namespace {

MetricsRecord eval_split(const ParamSet& model, const ArchConfig& arch, const Dataset& ds,
                         const ClientInfo& info, const std::vector<int>& indices, const char* split,
                         const std::string& run_id, const std::string& strategy, int round) {
  if (indices.empty()) throw std::invalid_argument("evaluate: empty split for client");
  Tensor x({(int)indices.size(), ds.input_dim});
  std::vector<int> labels((size_t)indices.size());
  for (size_t i = 0; i < indices.size(); ++i) {
    std::copy(ds.row(indices[i]), ds.row(indices[i]) + ds.input_dim,
              x.data.begin() + i * (size_t)ds.input_dim);
    labels[i] = ds.labels[indices[i]];
  }
  Prediction pred = predict(model, arch, x.data.data(), (int)indices.size());

  MetricsRecord rec;
  rec.run_id = run_id;
  rec.round = round;
  rec.strategy = strategy;
  rec.client_id = info.id;
  rec.group_id = info.group;
  rec.role = info.role == ClientRole::kTrainParticipant ? "train" : "heldout";
  rec.split = split;
  rec.accuracy = accuracy(pred.argmax, labels);
  int present = 0;
  {
    std::vector<int> seen(arch.num_classes, 0);
    for (int y : labels) seen[y] = 1;
    for (int s : seen) present += s;
  }
  rec.weighted_auc = present >= 2 ? weighted_auc(pred.probs, labels, arch.num_classes) : 1.0;
  rec.weighted_f1 = weighted_f1(pred.argmax, labels, arch.num_classes);
  return rec;
}

}  // namespace

std::vector<MetricsRecord> evaluate_global(const ServerState& server, const Dataset& ds,
                                           const TrainConfig& cfg, const std::string& run_id) {
  assert_heldout_hygiene(server);
  std::string strat = strategy_name(server.strategy);
  int eval_round = server.round;
  double lr = cfg.lr_at(std::max(0, server.round - 1));

  std::vector<MetricsRecord> records(server.clients.size() * 2);
  int nthreads = kern::effective_threads();
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(nthreads)
#endif
  for (int i = 0; i < (int)server.clients.size(); ++i) {
    const ClientRuntime& client = server.clients[i];
    const ParamSet* model = &server.omega;
    ParamSet scratch;
    if (server.strategy == Strategy::kLocalOnly) {
      model = &client.local_model;
    } else if (server.strategy == Strategy::kFedAvgFt && cfg.finetune_epochs > 0 &&
               !client.info.train_idx.empty()) {
      scratch = finetuned_copy(server.omega, server.arch, client, ds, cfg, lr,
                               derive_seed(server.seed, 0xe7, server.round));
      model = &scratch;
    }
    records[2 * i] = eval_split(*model, server.arch, ds, client.info, client.info.train_idx,
                                "local-train", run_id, strat, eval_round);
    records[2 * i + 1] = eval_split(*model, server.arch, ds, client.info, client.info.test_idx,
                                    "local-test", run_id, strat, eval_round);
  }
  return records;
}

namespace {

// Deployment-time upsilon for clients that never trained: embed the local
// pool once, then a few E-step sweeps. No gradients, no persistent state.
std::vector<double> estimate_upsilon_local(const ParamSet& model, const ArchConfig& arch,
                                           const ConceptBank& bank, const Dataset& ds,
                                           const std::vector<int>& idx) {
  if (idx.empty()) return std::vector<double>(bank.num_concepts, 1.0 / bank.num_concepts);
  Tensor x({(int)idx.size(), ds.input_dim});
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy(ds.row(idx[i]), ds.row(idx[i]) + ds.input_dim, x.data.begin() + i * (size_t)ds.input_dim);
  Tape tape;
  auto bound = bind_model(tape, model, false);
  auto mo = forward_model(tape, bound, arch, tape.input(x));
  TensorT<double> z = tape.value(mo.embed).cast<double>();

  // A few E-step sweeps from the uniform prior. Each sweep tightens upsilon
  // around the concepts that explain the pool; five is past the point of
  // visible change when the bank is large enough to cover the embedding
  // space, while avoiding the hard-assignment limit.
  std::vector<double> ups(bank.num_concepts, 1.0 / bank.num_concepts);
  for (int it = 0; it < 5; ++it) {
    TensorT<double> s = relevance(z, bank, ups);
    std::fill(ups.begin(), ups.end(), 0.0);
    for (int i = 0; i < s.shape[0]; ++i)
      for (int m = 0; m < s.shape[1]; ++m) ups[m] += s.at(i, m) / s.shape[0];
  }
  return ups;
}

}  // namespace

EvalPoints collect_eval_points(const ServerState& server, const Dataset& ds) {
  EvalPoints out;
  std::vector<const ClientRuntime*> order;
  for (const auto& c : server.clients) order.push_back(&c);

  int total = 0;
  for (const auto* c : order) total += (int)c->info.test_idx.size();
  bool fedvc = is_fedvc(server.strategy);
  int dim = fedvc ? server.bank.dim : server.arch.hidden_dims.back();
  out.points = TensorT<double>({total, dim});
  out.sample_ids.reserve(total);
  out.groups.reserve(total);

  int row = 0;
  for (const auto* c : order) {
    const auto& idx = c->info.test_idx;
    if (idx.empty()) continue;
    Tensor x({(int)idx.size(), ds.input_dim});
    for (size_t i = 0; i < idx.size(); ++i)
      std::copy(ds.row(idx[i]), ds.row(idx[i]) + ds.input_dim,
                x.data.begin() + i * (size_t)ds.input_dim);

    const ParamSet& model = (server.strategy == Strategy::kLocalOnly && !c->local_model.empty())
                                ? c->local_model
                                : server.omega;
    Tape tape;
    auto bound = bind_model(tape, model, false);
    auto mo = forward_model(tape, bound, server.arch, tape.input(x));

    if (fedvc) {
      // Held-out clients never trained, so their statistics are still at
      // init; estimate their mixing weights from the local pool instead,
      // the same statistics-only pass an unseen deployment client runs.
      std::vector<double> upsilon = c->info.role == ClientRole::kHeldOutTest
                                        ? estimate_upsilon_local(model, server.arch, server.bank, ds,
                                                                 c->info.train_idx)
                                        : finalize_upsilon(c->stats);
      TensorT<double> z = tape.value(mo.embed).cast<double>();
      TensorT<double> s = relevance(z, server.bank, upsilon);
      TensorT<double> phat = estimated_preferences(server.bank, s);
      for (size_t i = 0; i < idx.size(); ++i)
        for (int t = 0; t < dim; ++t) out.points.at(row + (int)i, t) = phat.at((int)i, t);
    } else {
      const auto& h = tape.value(mo.hidden);
      for (size_t i = 0; i < idx.size(); ++i)
        for (int t = 0; t < dim; ++t) out.points.at(row + (int)i, t) = double(h.at((int)i, t));
    }
    for (size_t i = 0; i < idx.size(); ++i) {
      out.sample_ids.push_back(idx[i]);
      out.groups.push_back(ds.domains.empty() ? c->info.group : ds.domains[idx[i]]);
    }
    row += (int)idx.size();
  }
  return out;
}

void assert_heldout_hygiene(const ServerState& server) {
  for (const auto& c : server.clients)
    if (c.info.role == ClientRole::kHeldOutTest && c.state_updates != 0)
      throw std::logic_error("hygiene: held-out client " + std::to_string(c.info.id) +
                             " received gradient updates");
}

}  // namespace fedvc
