#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedvc/tensor.hpp"

namespace fedvc {

struct Dataset {
  int n = 0;
  int input_dim = 0;
  int num_classes = 0;
  std::vector<float> features;  // n x input_dim
  std::vector<int> labels;      // n
  std::vector<int> domains;     // n, empty when the dataset has no domain structure

  const float* row(int i) const { return features.data() + (size_t)i * input_dim; }
  void validate() const;
};

// Synthetic Gaussian-mixture classification data: clusters_per_class unit
// Gaussians per class, centers spread on a circle of radius `separation` in
// the first two dims with small jitter elsewhere.
struct SynthSpec {
  int num_classes = 4;
  int clusters_per_class = 1;
  int dim = 2;
  double separation = 6.0;
  int samples = 2000;
};

struct SynthDataset {
  Dataset data;
  TensorT<double> centers;         // (num_classes * clusters_per_class) x dim
  std::vector<int> center_class;   // class of each center
};

SynthDataset synth_gmm_dataset(const SynthSpec& spec, uint64_t seed);

enum class ShiftMode { kTargetShift, kFeatureShift };
enum class ClientRole { kTrainParticipant, kHeldOutTest };

struct ShiftConfig {
  ShiftMode mode = ShiftMode::kTargetShift;
  int num_groups = 5;
  int train_groups = 3;
  int clients_per_group = 8;
  double alpha = 0.5;
  double local_test_fraction = 0.2;
  // feature shift only
  double shift_strength = 1.0;
  int heldout_clients_per_group = 1;
  int mixed_test_clients = 0;

  void validate() const;
};

struct ClientInfo {
  int id = -1;
  int group = -1;
  ClientRole role = ClientRole::kTrainParticipant;
  std::vector<int> train_idx;
  std::vector<int> test_idx;

  int local_count() const { return (int)(train_idx.size() + test_idx.size()); }
};

struct ClientPartition {
  std::vector<ClientInfo> clients;
  int num_groups = 0;
  ShiftMode mode = ShiftMode::kTargetShift;
  // Drawn per-group class distributions (target shift only), for audits.
  std::vector<std::vector<double>> group_class_dist;

  std::vector<int> participant_ids() const;
  // Throws on duplicate indices, out-of-range indices, empty clients, or a
  // training group without participants.
  void validate(const Dataset& ds) const;
  std::string manifest() const;
};

// One Dirichlet(alpha * 1) class-distribution draw per group; each class's
// samples are split across groups proportionally (largest-remainder
// rounding), each group's pool is split evenly among its clients. Groups
// >= train_groups are held out entirely.
ClientPartition dirichlet_label_partition(const Dataset& ds, const ShiftConfig& cfg, uint64_t seed);

// Domain variants via fixed seeded linear transforms (domain 0 is identity),
// then class-stratified client splits within each domain. One held-out client
// per training domain, full held-out domains past train_groups, plus optional
// mixed-domain test clients (group id == num_groups).
struct FeatureShiftResult {
  Dataset data;  // transformed copy with per-sample domain ids
  ClientPartition partition;
};

FeatureShiftResult feature_shift_partition(const Dataset& base, const ShiftConfig& cfg, uint64_t seed);

// IDX ingestion (big-endian headers, magic 0x00000803 for images and
// 0x00000801 for labels). Pixels are scaled to [0, 1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Seeded class-stratified subsample used to bring large corpora to desk scale.
Dataset subsample_per_class(const Dataset& ds, int per_class, uint64_t seed);

}  // namespace fedvc
