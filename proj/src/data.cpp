#include "fedvc/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "fedvc/rng.hpp"

namespace fedvc {

void Dataset::validate() const {
  if (n <= 0 || input_dim <= 0 || num_classes < 2)
    throw std::invalid_argument("Dataset: empty or degenerate");
  if ((long)features.size() != (long)n * input_dim)
    throw std::invalid_argument("Dataset: feature buffer size mismatch");
  if ((int)labels.size() != n) throw std::invalid_argument("Dataset: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= num_classes) throw std::invalid_argument("Dataset: label out of range");
  if (!domains.empty() && (int)domains.size() != n)
    throw std::invalid_argument("Dataset: domain id count mismatch");
}

void ShiftConfig::validate() const {
  if (num_groups < 2) throw std::invalid_argument("ShiftConfig: need at least 2 groups");
  if (train_groups < 1 || train_groups > num_groups)
    throw std::invalid_argument("ShiftConfig: train_groups out of range");
  if (clients_per_group < 1) throw std::invalid_argument("ShiftConfig: clients_per_group must be positive");
  if (!(alpha > 0.0)) throw std::invalid_argument("ShiftConfig: alpha must be positive");
  if (local_test_fraction < 0.0 || local_test_fraction >= 1.0)
    throw std::invalid_argument("ShiftConfig: local_test_fraction must lie in [0, 1)");
  if (mode == ShiftMode::kFeatureShift) {
    if (shift_strength < 0.0) throw std::invalid_argument("ShiftConfig: shift_strength must be nonnegative");
    if (heldout_clients_per_group < 0 || heldout_clients_per_group >= clients_per_group)
      throw std::invalid_argument("ShiftConfig: heldout_clients_per_group out of range");
    if (mixed_test_clients < 0) throw std::invalid_argument("ShiftConfig: mixed_test_clients must be nonnegative");
  }
}

SynthDataset synth_gmm_dataset(const SynthSpec& spec, uint64_t seed) {
  if (spec.num_classes < 2) throw std::invalid_argument("SynthSpec: need at least 2 classes");
  if (spec.clusters_per_class < 1) throw std::invalid_argument("SynthSpec: clusters_per_class must be positive");
  if (spec.dim < 2) throw std::invalid_argument("SynthSpec: dim must be at least 2");
  if (spec.samples < spec.num_classes) throw std::invalid_argument("SynthSpec: too few samples");
  Rng rng(seed);

  int total_centers = spec.num_classes * spec.clusters_per_class;
  SynthDataset out;
  out.centers = TensorT<double>({total_centers, spec.dim});
  out.center_class.resize(total_centers);
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int j = 0; j < spec.clusters_per_class; ++j) {
      int idx = c * spec.clusters_per_class + j;
      out.center_class[idx] = c;
      double angle = 2.0 * M_PI * idx / total_centers;
      out.centers.at(idx, 0) = spec.separation * std::cos(angle);
      out.centers.at(idx, 1) = spec.separation * std::sin(angle);
      for (int t = 2; t < spec.dim; ++t) out.centers.at(idx, t) = 0.1 * rng.gaussian();
    }
  }

  Dataset& ds = out.data;
  ds.n = spec.samples;
  ds.input_dim = spec.dim;
  ds.num_classes = spec.num_classes;
  ds.features.resize((size_t)ds.n * ds.input_dim);
  ds.labels.resize(ds.n);
  for (int i = 0; i < ds.n; ++i) {
    int idx = (int)rng.below(total_centers);
    ds.labels[i] = out.center_class[idx];
    for (int t = 0; t < spec.dim; ++t)
      ds.features[(size_t)i * spec.dim + t] = float(out.centers.at(idx, t) + rng.gaussian());
  }
  ds.validate();
  return out;
}

namespace {

std::vector<std::vector<int>> indices_by_class(const Dataset& ds) {
  std::vector<std::vector<int>> by_class(ds.num_classes);
  for (int i = 0; i < ds.n; ++i) by_class[ds.labels[i]].push_back(i);
  return by_class;
}

// Largest-remainder apportionment of `total` items over `weights`.
std::vector<int> apportion(const std::vector<double>& weights, int total) {
  double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<int> counts(weights.size(), 0);
  if (wsum <= 0.0 || total == 0) return counts;
  std::vector<std::pair<double, size_t>> remainders;
  int assigned = 0;
  for (size_t g = 0; g < weights.size(); ++g) {
    double exact = total * weights[g] / wsum;
    counts[g] = (int)std::floor(exact);
    assigned += counts[g];
    remainders.push_back({exact - counts[g], g});
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int r = 0; r < total - assigned; ++r) counts[remainders[r % remainders.size()].second] += 1;
  return counts;
}

// Class-stratified local train/test split; the tail of each class chunk goes
// to the local test set.
void split_local(ClientInfo& client, std::vector<int> samples, const Dataset& ds, double test_fraction,
                 Rng& rng) {
  rng.shuffle(samples);
  std::vector<std::vector<int>> by_class(ds.num_classes);
  for (int idx : samples) by_class[ds.labels[idx]].push_back(idx);
  for (const auto& bucket : by_class) {
    int ntest = (int)std::floor(bucket.size() * test_fraction + 0.5);
    if (ntest >= (int)bucket.size() && !bucket.empty()) ntest = (int)bucket.size() - 1;
    for (size_t i = 0; i < bucket.size(); ++i) {
      if ((int)i < (int)bucket.size() - ntest)
        client.train_idx.push_back(bucket[i]);
      else
        client.test_idx.push_back(bucket[i]);
    }
  }
  std::sort(client.train_idx.begin(), client.train_idx.end());
  std::sort(client.test_idx.begin(), client.test_idx.end());
}

}  // namespace

std::vector<int> ClientPartition::participant_ids() const {
  std::vector<int> out;
  for (const auto& c : clients)
    if (c.role == ClientRole::kTrainParticipant) out.push_back(c.id);
  return out;
}

void ClientPartition::validate(const Dataset& ds) const {
  if (clients.empty()) throw std::invalid_argument("ClientPartition: no clients");
  std::set<int> seen;
  std::vector<int> participants_per_group(num_groups + 1, 0);
  std::vector<int> heldout_per_group(num_groups + 1, 0);
  for (const auto& c : clients) {
    if (c.group < 0 || c.group > num_groups)
      throw std::invalid_argument("ClientPartition: group id out of range");
    if (c.train_idx.empty() && c.test_idx.empty())
      throw std::invalid_argument("ClientPartition: empty client");
    if (c.role == ClientRole::kTrainParticipant)
      participants_per_group[c.group] += 1;
    else
      heldout_per_group[c.group] += 1;
    for (const auto* list : {&c.train_idx, &c.test_idx}) {
      for (int idx : *list) {
        if (idx < 0 || idx >= ds.n) throw std::invalid_argument("ClientPartition: index out of range");
        if (!seen.insert(idx).second)
          throw std::invalid_argument("ClientPartition: duplicate sample index across splits");
      }
    }
  }
  if (participants_per_group == std::vector<int>(num_groups + 1, 0))
    throw std::invalid_argument("ClientPartition: no training participants at all");
  if (mode == ShiftMode::kTargetShift) {
    // Target-shift groups are wholly training or wholly held out.
    for (int g = 0; g <= num_groups; ++g)
      if (participants_per_group[g] > 0 && heldout_per_group[g] > 0)
        throw std::invalid_argument("ClientPartition: mixed-role group under target shift");
  }
}

std::string ClientPartition::manifest() const {
  std::ostringstream out;
  out << "# client_id group role n_train n_test train_indices;test_indices\n";
  for (const auto& c : clients) {
    out << c.id << ' ' << c.group << ' '
        << (c.role == ClientRole::kTrainParticipant ? "train" : "heldout") << ' ' << c.train_idx.size()
        << ' ' << c.test_idx.size() << ' ';
    for (size_t i = 0; i < c.train_idx.size(); ++i) out << (i ? "," : "") << c.train_idx[i];
    out << ';';
    for (size_t i = 0; i < c.test_idx.size(); ++i) out << (i ? "," : "") << c.test_idx[i];
    out << '\n';
  }
  return out.str();
}

ClientPartition dirichlet_label_partition(const Dataset& ds, const ShiftConfig& cfg, uint64_t seed) {
  ds.validate();
  cfg.validate();
  if (cfg.mode != ShiftMode::kTargetShift)
    throw std::invalid_argument("dirichlet_label_partition: target_shift mode required");
  Rng rng(seed);
  auto by_class = indices_by_class(ds);
  for (auto& bucket : by_class) rng.shuffle(bucket);

  int groups = cfg.num_groups;
  std::vector<std::vector<double>> dists;
  std::vector<std::vector<int>> group_pool;
  const int max_retries = 10;
  for (int attempt = 0;; ++attempt) {
    dists.assign(groups, {});
    for (int g = 0; g < groups; ++g) dists[g] = rng.dirichlet(cfg.alpha, ds.num_classes);
    group_pool.assign(groups, {});
    for (int c = 0; c < ds.num_classes; ++c) {
      std::vector<double> weights(groups);
      for (int g = 0; g < groups; ++g) weights[g] = dists[g][c];
      auto counts = apportion(weights, (int)by_class[c].size());
      int cursor = 0;
      for (int g = 0; g < groups; ++g) {
        for (int i = 0; i < counts[g]; ++i) group_pool[g].push_back(by_class[c][cursor++]);
      }
    }
    bool ok = true;
    int min_needed = cfg.clients_per_group;
    for (int g = 0; g < groups; ++g)
      if ((int)group_pool[g].size() < min_needed) ok = false;
    if (ok) break;
    if (attempt + 1 >= max_retries)
      throw std::runtime_error("dirichlet_label_partition: a group stayed empty after retries; "
                               "increase alpha or the sample count");
  }

  ClientPartition part;
  part.num_groups = groups;
  part.mode = ShiftMode::kTargetShift;
  part.group_class_dist = dists;
  int next_id = 0;
  for (int g = 0; g < groups; ++g) {
    rng.shuffle(group_pool[g]);
    ClientRole role = g < cfg.train_groups ? ClientRole::kTrainParticipant : ClientRole::kHeldOutTest;
    int total = (int)group_pool[g].size();
    int base = total / cfg.clients_per_group;
    int extra = total % cfg.clients_per_group;
    int cursor = 0;
    for (int k = 0; k < cfg.clients_per_group; ++k) {
      int take = base + (k < extra ? 1 : 0);
      ClientInfo client;
      client.id = next_id++;
      client.group = g;
      client.role = role;
      std::vector<int> mine(group_pool[g].begin() + cursor, group_pool[g].begin() + cursor + take);
      cursor += take;
      split_local(client, std::move(mine), ds, cfg.local_test_fraction, rng);
      part.clients.push_back(std::move(client));
    }
  }
  part.validate(ds);
  return part;
}

namespace {

// Deterministic domain transform: x' = scale o (A x) + bias with
// A = (1 - t) I + t Q for a random orthogonal Q. Domain 0 is the identity.
struct DomainTransform {
  TensorT<double> a;          // dim x dim
  std::vector<double> bias;   // dim
  std::vector<double> scale;  // dim
  bool identity = false;

  void apply(float* x, int dim, std::vector<double>& tmp) const {
    if (identity) return;
    for (int i = 0; i < dim; ++i) {
      double acc = 0.0;
      for (int j = 0; j < dim; ++j) acc += a.at(i, j) * double(x[j]);
      tmp[i] = scale[i] * acc + bias[i];
    }
    for (int i = 0; i < dim; ++i) x[i] = float(tmp[i]);
  }
};

DomainTransform make_transform(int domain, int dim, double strength, uint64_t seed) {
  DomainTransform tf;
  if (domain == 0 || strength == 0.0) {
    tf.identity = true;
    return tf;
  }
  Rng rng(derive_seed(seed, 0xd0, domain));

  // Random orthogonal basis by Gram-Schmidt over a Gaussian matrix.
  TensorT<double> q({dim, dim});
  for (auto& x : q.data) x = rng.gaussian();
  for (int i = 0; i < dim; ++i) {
    for (int j = 0; j < i; ++j) {
      double dot = 0.0;
      for (int t = 0; t < dim; ++t) dot += q.at(i, t) * q.at(j, t);
      for (int t = 0; t < dim; ++t) q.at(i, t) -= dot * q.at(j, t);
    }
    double norm = 0.0;
    for (int t = 0; t < dim; ++t) norm += q.at(i, t) * q.at(i, t);
    norm = std::sqrt(std::max(norm, 1e-12));
    for (int t = 0; t < dim; ++t) q.at(i, t) /= norm;
  }

  double blend = std::min(1.0, 0.4 * strength);
  tf.a = TensorT<double>({dim, dim});
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) tf.a.at(i, j) = (1.0 - blend) * (i == j ? 1.0 : 0.0) + blend * q.at(i, j);

  tf.bias.resize(dim);
  tf.scale.resize(dim);
  for (int i = 0; i < dim; ++i) {
    tf.bias[i] = strength * rng.gaussian();
    tf.scale[i] = std::clamp(1.0 + 0.2 * strength * rng.gaussian(), 0.3, 3.0);
  }
  return tf;
}

}  // namespace

FeatureShiftResult feature_shift_partition(const Dataset& base, const ShiftConfig& cfg, uint64_t seed) {
  base.validate();
  cfg.validate();
  if (cfg.mode != ShiftMode::kFeatureShift)
    throw std::invalid_argument("feature_shift_partition: feature_shift mode required");
  Rng rng(derive_seed(seed, 0xf5));

  FeatureShiftResult out;
  out.data = base;
  out.data.domains.assign(base.n, -1);

  // Class-stratified domain pools.
  auto by_class = indices_by_class(base);
  std::vector<std::vector<int>> domain_pool(cfg.num_groups);
  for (auto& bucket : by_class) {
    rng.shuffle(bucket);
    for (size_t i = 0; i < bucket.size(); ++i) domain_pool[i % cfg.num_groups].push_back(bucket[i]);
  }

  std::vector<double> tmp(base.input_dim);
  for (int g = 0; g < cfg.num_groups; ++g) {
    DomainTransform tf = make_transform(g, base.input_dim, cfg.shift_strength, seed);
    for (int idx : domain_pool[g]) {
      out.data.domains[idx] = g;
      tf.apply(out.data.features.data() + (size_t)idx * base.input_dim, base.input_dim, tmp);
    }
  }

  // Carve a mixed pool out of every domain before forming per-domain clients.
  int total_clients = cfg.num_groups * cfg.clients_per_group + cfg.mixed_test_clients;
  std::vector<int> mixed_pool;
  if (cfg.mixed_test_clients > 0) {
    double mixed_frac = double(cfg.mixed_test_clients) / total_clients;
    for (int g = 0; g < cfg.num_groups; ++g) {
      int take = (int)std::floor(domain_pool[g].size() * mixed_frac + 0.5);
      for (int i = 0; i < take; ++i) {
        mixed_pool.push_back(domain_pool[g].back());
        domain_pool[g].pop_back();
      }
    }
    rng.shuffle(mixed_pool);
  }

  ClientPartition& part = out.partition;
  part.num_groups = cfg.num_groups;
  part.mode = ShiftMode::kFeatureShift;
  int next_id = 0;
  for (int g = 0; g < cfg.num_groups; ++g) {
    bool training_domain = g < cfg.train_groups;
    // Deal each class round-robin so every client mirrors the domain's label
    // marginal.
    std::vector<std::vector<int>> mine(cfg.clients_per_group);
    {
      std::vector<std::vector<int>> buckets(base.num_classes);
      for (int idx : domain_pool[g]) buckets[base.labels[idx]].push_back(idx);
      int turn = 0;
      for (auto& bucket : buckets) {
        rng.shuffle(bucket);
        for (int idx : bucket) mine[turn++ % cfg.clients_per_group].push_back(idx);
      }
    }
    for (int k = 0; k < cfg.clients_per_group; ++k) {
      ClientInfo client;
      client.id = next_id++;
      client.group = g;
      bool heldout_slot = k >= cfg.clients_per_group - cfg.heldout_clients_per_group;
      client.role = (training_domain && !heldout_slot) ? ClientRole::kTrainParticipant
                                                       : ClientRole::kHeldOutTest;
      split_local(client, std::move(mine[k]), out.data, cfg.local_test_fraction, rng);
      part.clients.push_back(std::move(client));
    }
  }
  if (!mixed_pool.empty()) {
    int per = (int)mixed_pool.size() / cfg.mixed_test_clients;
    int extra = (int)mixed_pool.size() % cfg.mixed_test_clients;
    int cursor = 0;
    for (int k = 0; k < cfg.mixed_test_clients; ++k) {
      int take = per + (k < extra ? 1 : 0);
      if (take == 0) continue;
      ClientInfo client;
      client.id = next_id++;
      client.group = cfg.num_groups;
      client.role = ClientRole::kHeldOutTest;
      std::vector<int> mine(mixed_pool.begin() + cursor, mixed_pool.begin() + cursor + take);
      cursor += take;
      split_local(client, std::move(mine), out.data, cfg.local_test_fraction, rng);
      part.clients.push_back(std::move(client));
    }
  }
  part.validate(out.data);
  return out;
}

namespace {

uint32_t read_be32(std::istream& in, const std::string& path, const char* what) {
  unsigned char b[4];
  if (!in.read((char*)b, 4)) {
    std::ostringstream msg;
    msg << "idx: " << path << ": truncated while reading " << what << " at offset " << in.tellg();
    throw std::runtime_error(msg.str());
  }
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("idx: cannot open " + images_path);
  uint32_t magic = read_be32(img, images_path, "magic");
  if (magic != 0x00000803) {
    std::ostringstream msg;
    msg << "idx: " << images_path << ": bad image magic 0x" << std::hex << magic
        << " (expected 0x00000803)";
    throw std::runtime_error(msg.str());
  }
  uint32_t count = read_be32(img, images_path, "count");
  uint32_t rows = read_be32(img, images_path, "rows");
  uint32_t cols = read_be32(img, images_path, "cols");
  if (count == 0 || rows == 0 || cols == 0 || rows > 4096 || cols > 4096)
    throw std::runtime_error("idx: " + images_path + ": implausible header dimensions");

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("idx: cannot open " + labels_path);
  uint32_t lmagic = read_be32(lab, labels_path, "magic");
  if (lmagic != 0x00000801) {
    std::ostringstream msg;
    msg << "idx: " << labels_path << ": bad label magic 0x" << std::hex << lmagic
        << " (expected 0x00000801)";
    throw std::runtime_error(msg.str());
  }
  uint32_t lcount = read_be32(lab, labels_path, "count");
  if (lcount != count) {
    std::ostringstream msg;
    msg << "idx: image/label count mismatch (" << count << " images vs " << lcount << " labels)";
    throw std::runtime_error(msg.str());
  }

  Dataset ds;
  ds.n = (int)count;
  ds.input_dim = (int)(rows * cols);
  ds.features.resize((size_t)ds.n * ds.input_dim);
  ds.labels.resize(ds.n);

  std::vector<unsigned char> buf((size_t)ds.input_dim);
  for (int i = 0; i < ds.n; ++i) {
    if (!img.read((char*)buf.data(), ds.input_dim)) {
      std::ostringstream msg;
      msg << "idx: " << images_path << ": truncated pixel data at image " << i;
      throw std::runtime_error(msg.str());
    }
    for (int t = 0; t < ds.input_dim; ++t)
      ds.features[(size_t)i * ds.input_dim + t] = float(buf[(size_t)t]) / 255.0f;
  }
  int max_label = 0;
  for (int i = 0; i < ds.n; ++i) {
    unsigned char y;
    if (!lab.read((char*)&y, 1)) {
      std::ostringstream msg;
      msg << "idx: " << labels_path << ": truncated label data at item " << i;
      throw std::runtime_error(msg.str());
    }
    ds.labels[i] = (int)y;
    max_label = std::max(max_label, (int)y);
  }
  ds.num_classes = max_label + 1;
  ds.validate();
  return ds;
}

Dataset subsample_per_class(const Dataset& ds, int per_class, uint64_t seed) {
  ds.validate();
  if (per_class <= 0) throw std::invalid_argument("subsample_per_class: per_class must be positive");
  Rng rng(seed);
  auto by_class = indices_by_class(ds);
  std::vector<int> keep;
  for (auto& bucket : by_class) {
    rng.shuffle(bucket);
    int take = std::min<int>(per_class, (int)bucket.size());
    keep.insert(keep.end(), bucket.begin(), bucket.begin() + take);
  }
  std::sort(keep.begin(), keep.end());

  Dataset out;
  out.n = (int)keep.size();
  out.input_dim = ds.input_dim;
  out.num_classes = ds.num_classes;
  out.features.resize((size_t)out.n * out.input_dim);
  out.labels.resize(out.n);
  if (!ds.domains.empty()) out.domains.resize(out.n);
  for (int i = 0; i < out.n; ++i) {
    int src = keep[i];
    std::copy(ds.row(src), ds.row(src) + ds.input_dim, out.features.begin() + (size_t)i * out.input_dim);
    out.labels[i] = ds.labels[src];
    if (!ds.domains.empty()) out.domains[i] = ds.domains[src];
  }
  out.validate();
  return out;
}

}  // namespace fedvc
