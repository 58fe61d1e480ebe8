#include "fedvc/concepts.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "fedvc/rng.hpp"

namespace fedvc {

namespace {

void check_bank(const ConceptBank& bank) {
  if (bank.num_concepts <= 0 || bank.dim <= 0)
    throw std::invalid_argument("ConceptBank: empty bank");
  if (bank.concepts.shape != std::vector<int>{bank.num_concepts, bank.dim})
    throw std::invalid_argument("ConceptBank: concept matrix shape mismatch");
  if (!(bank.iota > 0.0)) throw std::invalid_argument("ConceptBank: iota must be positive");
}

void check_upsilon(const std::vector<double>& upsilon, int m) {
  if ((int)upsilon.size() != m)
    throw std::invalid_argument("upsilon: length must equal the number of concepts");
  double total = 0.0;
  for (double u : upsilon) {
    if (u < 0.0) throw std::invalid_argument("upsilon: negative weight");
    total += u;
  }
  if (total <= 0.0) throw std::invalid_argument("upsilon: weights must not all be zero");
}

void check_embed(const TensorT<double>& z, const ConceptBank& bank) {
  if (z.rank() != 2 || z.shape[1] != bank.dim)
    throw std::invalid_argument("embeddings: expected batch x dim matrix");
}

}  // namespace

ConceptBank init_concept_bank(int num_concepts, int dim, double iota, uint64_t seed) {
  if (num_concepts <= 0) throw std::invalid_argument("init_concept_bank: need at least one concept");
  if (dim <= 0) throw std::invalid_argument("init_concept_bank: dim must be positive");
  if (!(iota > 0.0)) throw std::invalid_argument("init_concept_bank: iota must be positive");
  ConceptBank bank;
  bank.num_concepts = num_concepts;
  bank.dim = dim;
  bank.iota = iota;
  bank.concepts = TensorT<double>({num_concepts, dim});
  Rng rng(seed);
  for (auto& x : bank.concepts.data) x = 0.1 * rng.gaussian();
  return bank;
}

TensorT<double> relevance(const TensorT<double>& z, const ConceptBank& bank,
                          const std::vector<double>& upsilon) {
  check_bank(bank);
  check_embed(z, bank);
  check_upsilon(upsilon, bank.num_concepts);
  int n = z.shape[0], m = bank.num_concepts, d = bank.dim;

  TensorT<double> s({n, m});
  std::vector<double> logits(m);
  for (int i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < m; ++j) {
      double dist = 0.0;
      for (int t = 0; t < d; ++t) {
        double diff = z.at(i, t) - bank.concepts.at(j, t);
        dist += diff * diff;
      }
      logits[j] = upsilon[j] > 0.0 ? std::log(upsilon[j]) - bank.iota * dist
                                   : -std::numeric_limits<double>::infinity();
      if (logits[j] > mx) mx = logits[j];
    }
    double denom = 0.0;
    for (int j = 0; j < m; ++j) denom += std::exp(logits[j] - mx);
    for (int j = 0; j < m; ++j) s.at(i, j) = std::exp(logits[j] - mx) / denom;
  }
  return s;
}

std::vector<double> client_preference(const ConceptBank& bank, const std::vector<double>& upsilon) {
  check_bank(bank);
  check_upsilon(upsilon, bank.num_concepts);
  std::vector<double> p(bank.dim, 0.0);
  for (int j = 0; j < bank.num_concepts; ++j)
    for (int t = 0; t < bank.dim; ++t) p[t] += upsilon[j] * bank.concepts.at(j, t);
  return p;
}

TensorT<double> estimated_preferences(const ConceptBank& bank, const TensorT<double>& s) {
  check_bank(bank);
  if (s.rank() != 2 || s.shape[1] != bank.num_concepts)
    throw std::invalid_argument("estimated_preferences: relevance must be batch x num_concepts");
  int n = s.shape[0];
  TensorT<double> p({n, bank.dim});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < bank.num_concepts; ++j)
      for (int t = 0; t < bank.dim; ++t) p.at(i, t) += s.at(i, j) * bank.concepts.at(j, t);
  return p;
}

double gmm_log_likelihood(const TensorT<double>& z, const ConceptBank& bank,
                          const std::vector<double>& upsilon) {
  check_bank(bank);
  check_embed(z, bank);
  check_upsilon(upsilon, bank.num_concepts);
  int n = z.shape[0], m = bank.num_concepts, d = bank.dim;
  double norm_const = -0.5 * d * std::log(2.0 * M_PI);

  double total = 0.0;
  std::vector<double> logits(m);
  for (int i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < m; ++j) {
      double dist = 0.0;
      for (int t = 0; t < d; ++t) {
        double diff = z.at(i, t) - bank.concepts.at(j, t);
        dist += diff * diff;
      }
      logits[j] = upsilon[j] > 0.0 ? std::log(upsilon[j]) + norm_const - 0.5 * dist
                                   : -std::numeric_limits<double>::infinity();
      if (logits[j] > mx) mx = logits[j];
    }
    double denom = 0.0;
    for (int j = 0; j < m; ++j) denom += std::exp(logits[j] - mx);
    total += mx + std::log(denom);
  }
  return total;
}

EmUpdate em_m_step(const std::vector<TensorT<double>>& s_per_client,
                   const std::vector<TensorT<double>>& z_per_client, const ConceptBank& prev) {
  check_bank(prev);
  if (s_per_client.empty() || s_per_client.size() != z_per_client.size())
    throw std::invalid_argument("em_m_step: need matching nonempty client lists");
  int m = prev.num_concepts, d = prev.dim;

  EmUpdate out;
  out.upsilons.resize(s_per_client.size());
  std::vector<double> pooled_mass(m, 0.0);
  TensorT<double> pooled_sum({m, d});

  for (size_t k = 0; k < s_per_client.size(); ++k) {
    const auto& s = s_per_client[k];
    const auto& z = z_per_client[k];
    if (s.rank() != 2 || s.shape[1] != m)
      throw std::invalid_argument("em_m_step: responsibilities must be batch x num_concepts");
    check_embed(z, prev);
    if (s.shape[0] != z.shape[0] || s.shape[0] == 0)
      throw std::invalid_argument("em_m_step: responsibilities and embeddings disagree");
    int n = s.shape[0];
    auto& ups = out.upsilons[k];
    ups.assign(m, 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) {
        double w = s.at(i, j);
        ups[j] += w / n;
        pooled_mass[j] += w;
        for (int t = 0; t < d; ++t) pooled_sum.at(j, t) += w * z.at(i, t);
      }
  }

  out.concepts = TensorT<double>({m, d});
  for (int j = 0; j < m; ++j)
    for (int t = 0; t < d; ++t)
      out.concepts.at(j, t) = pooled_mass[j] < kDeadMass ? prev.concepts.at(j, t)
                                                         : pooled_sum.at(j, t) / pooled_mass[j];
  return out;
}

StreamStats init_stream_stats(const ConceptBank& bank, double kappa) {
  check_bank(bank);
  if (kappa < 0.0 || kappa > 1.0) throw std::invalid_argument("StreamStats: kappa must lie in [0, 1]");
  StreamStats st;
  st.kappa = kappa;
  st.count = 1.0;
  st.mass.assign(bank.num_concepts, 1.0 / bank.num_concepts);
  st.csum.assign((size_t)bank.num_concepts * bank.dim, 0.0);
  for (int j = 0; j < bank.num_concepts; ++j)
    for (int t = 0; t < bank.dim; ++t)
      st.csum[(size_t)j * bank.dim + t] = bank.concepts.at(j, t) * st.mass[j];
  return st;
}

void accumulate_minibatch(StreamStats& stats, const TensorT<double>& s, const TensorT<double>& z) {
  int m = stats.num_concepts();
  if (m == 0) throw std::invalid_argument("accumulate_minibatch: uninitialized stats");
  if (s.rank() != 2 || z.rank() != 2 || s.shape[0] != z.shape[0])
    throw std::invalid_argument("accumulate_minibatch: responsibilities and embeddings disagree");
  if (s.shape[0] == 0) throw std::invalid_argument("accumulate_minibatch: empty batch");
  if (s.shape[1] != m) throw std::invalid_argument("accumulate_minibatch: concept count mismatch");
  int d = z.shape[1];
  if ((size_t)m * d != stats.csum.size())
    throw std::invalid_argument("accumulate_minibatch: embedding dim mismatch");
  int b = s.shape[0];
  double kappa = stats.kappa, fresh = 1.0 - stats.kappa;

  for (int j = 0; j < m; ++j) {
    double mass = 0.0;
    for (int i = 0; i < b; ++i) mass += s.at(i, j);
    stats.mass[j] = stats.mass[j] * kappa + mass * fresh;
    for (int t = 0; t < d; ++t) {
      double dot = 0.0;
      for (int i = 0; i < b; ++i) dot += s.at(i, j) * z.at(i, t);
      auto& cell = stats.csum[(size_t)j * d + t];
      cell = cell * kappa + dot * fresh;
    }
  }
  stats.count = stats.count * kappa + b * fresh;
}

std::vector<double> finalize_upsilon(const StreamStats& stats) {
  if (stats.num_concepts() == 0) throw std::invalid_argument("finalize_upsilon: uninitialized stats");
  if (!(stats.count > 0.0)) throw std::invalid_argument("finalize_upsilon: nonpositive sample count");
  std::vector<double> ups(stats.mass.size());
  double total = 0.0;
  for (size_t j = 0; j < ups.size(); ++j) {
    ups[j] = stats.mass[j] / stats.count;
    if (ups[j] < 0.0) ups[j] = 0.0;
    total += ups[j];
  }
  if (total <= 0.0) throw std::invalid_argument("finalize_upsilon: zero total mass");
  for (auto& u : ups) u /= total;
  return ups;
}

TensorT<double> merge_concepts(const std::vector<const StreamStats*>& stats, const ConceptBank& prev) {
  check_bank(prev);
  if (stats.empty()) throw std::invalid_argument("merge_concepts: no client statistics");
  int m = prev.num_concepts, d = prev.dim;
  for (const StreamStats* st : stats) {
    if (st == nullptr || st->num_concepts() != m || st->csum.size() != (size_t)m * d)
      throw std::invalid_argument("merge_concepts: statistics shape mismatch");
  }

  TensorT<double> merged({m, d});
  for (int j = 0; j < m; ++j) {
    double mass = 0.0;
    for (const StreamStats* st : stats) mass += st->mass[j];
    for (int t = 0; t < d; ++t) {
      if (mass < kDeadMass) {
        merged.at(j, t) = prev.concepts.at(j, t);
      } else {
        double total = 0.0;
        for (const StreamStats* st : stats) total += st->csum[(size_t)j * d + t];
        merged.at(j, t) = total / mass;
      }
    }
  }
  return merged;
}

TensorT<double> kmeanspp_select(const TensorT<double>& points, int k, uint64_t seed) {
  if (points.rank() != 2 || points.shape[0] == 0)
    throw std::invalid_argument("kmeanspp_select: need a nonempty point matrix");
  int n = points.shape[0], d = points.shape[1];
  if (k <= 0) throw std::invalid_argument("kmeanspp_select: k must be positive");
  Rng rng(seed);

  TensorT<double> centers({k, d});
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  int first = (int)rng.below(n);
  for (int t = 0; t < d; ++t) centers.at(0, t) = points.at(first, t);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int t = 0; t < d; ++t) {
        double diff = points.at(i, t) - centers.at(c - 1, t);
        acc += diff * diff;
      }
      if (acc < dist[i]) dist[i] = acc;
      total += dist[i];
    }
    int pick = 0;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      double run = 0.0;
      for (int i = 0; i < n; ++i) {
        run += dist[i];
        if (run >= r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = (int)rng.below(n);
    }
    for (int t = 0; t < d; ++t) centers.at(c, t) = points.at(pick, t);
  }
  return centers;
}

void bank_to_params(const ConceptBank& bank,
                    const std::vector<std::pair<int, std::vector<double>>>& upsilons, ParamSet& out) {
  check_bank(bank);
  out.insert("vc.concepts", bank.concepts.cast<float>());
  for (const auto& [client, ups] : upsilons) {
    if ((int)ups.size() != bank.num_concepts)
      throw std::invalid_argument("bank_to_params: upsilon length mismatch");
    TensorT<float> row({bank.num_concepts});
    for (int j = 0; j < bank.num_concepts; ++j) row.data[(size_t)j] = float(ups[j]);
    out.insert("vc.upsilon." + std::to_string(client), std::move(row));
  }
}

ConceptBank bank_from_params(const ParamSet& params, double iota) {
  const auto& c = params.at("vc.concepts");
  if (c.rank() != 2) throw std::runtime_error("bank_from_params: vc.concepts must be rank 2");
  ConceptBank bank;
  bank.num_concepts = c.shape[0];
  bank.dim = c.shape[1];
  bank.iota = iota;
  bank.concepts = c.cast<double>();
  return bank;
}

}  // namespace fedvc
