#pragma once

#include <cstdint>
#include <vector>

#include "fedvc/params.hpp"
#include "fedvc/tensor.hpp"

namespace fedvc {

// Shared bank of virtual concepts. Concepts and all EM statistics are kept in
// double; training casts to float at the tape boundary.
struct ConceptBank {
  int num_concepts = 0;
  int dim = 0;
  double iota = 0.1;
  TensorT<double> concepts;  // num_concepts x dim

  TensorT<float> concepts_f() const { return concepts.cast<float>(); }
};

ConceptBank init_concept_bank(int num_concepts, int dim, double iota, uint64_t seed);

// Row-stochastic relevance. s[i][m] is proportional to
// upsilon[m] * exp(-iota * ||z_i - c_m||^2), normalized over m with the
// log-sum-exp trick. upsilon must be nonnegative with positive sum.
TensorT<double> relevance(const TensorT<double>& z, const ConceptBank& bank,
                          const std::vector<double>& upsilon);

// p = sum_m upsilon[m] * c_m
std::vector<double> client_preference(const ConceptBank& bank, const std::vector<double>& upsilon);

// phat_i = sum_m s[i][m] * c_m, for every row of s.
TensorT<double> estimated_preferences(const ConceptBank& bank, const TensorT<double>& s);

// sum_i log sum_m upsilon[m] * N(z_i; c_m, I), with the unit-variance Gaussian
// density including its (2*pi)^(-d/2) constant.
double gmm_log_likelihood(const TensorT<double>& z, const ConceptBank& bank,
                          const std::vector<double>& upsilon);

struct EmUpdate {
  std::vector<std::vector<double>> upsilons;  // one per client
  TensorT<double> concepts;                   // num_concepts x dim
};

// Batch M-step over per-client responsibilities and embeddings. Mixing
// weights are per-client column means of s; concepts pool every client's
// s-weighted embeddings. Concepts whose pooled mass falls below kDeadMass
// keep their previous value.
EmUpdate em_m_step(const std::vector<TensorT<double>>& s_per_client,
                   const std::vector<TensorT<double>>& z_per_client, const ConceptBank& prev);

constexpr double kDeadMass = 1e-12;

// Client-side running sufficient statistics, updated per minibatch with a
// moving average (kappa weights the old value).
struct StreamStats {
  std::vector<double> mass;  // per-concept responsibility mass, length M
  std::vector<double> csum;  // s-weighted embedding sums, M x d row-major
  double count = 0.0;
  double kappa = 0.05;

  int num_concepts() const { return (int)mass.size(); }
};

// Fresh statistics consistent with the current bank: count 1, uniform mass
// 1/M, csum rows equal to c_m * mass_m.
StreamStats init_stream_stats(const ConceptBank& bank, double kappa);

void accumulate_minibatch(StreamStats& stats, const TensorT<double>& s, const TensorT<double>& z);

// upsilon = mass / count, renormalized to sum exactly 1.
std::vector<double> finalize_upsilon(const StreamStats& stats);

// Server merge: c_m = sum_k csum_m / sum_k mass_m, with the same dead-concept
// freeze as the batch M-step.
TensorT<double> merge_concepts(const std::vector<const StreamStats*>& stats, const ConceptBank& prev);

// K-means++ seeding over candidate points (n x d), used by the optional
// concept re-initialization after the first round.
TensorT<double> kmeanspp_select(const TensorT<double>& points, int k, uint64_t seed);

// Checkpoint embedding of the bank: concepts under "vc.concepts", one
// "vc.upsilon.<client_id>" row per stored client.
void bank_to_params(const ConceptBank& bank,
                    const std::vector<std::pair<int, std::vector<double>>>& upsilons, ParamSet& out);
ConceptBank bank_from_params(const ParamSet& params, double iota);

}  // namespace fedvc
