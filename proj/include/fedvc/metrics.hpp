#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedvc/tensor.hpp"

namespace fedvc {

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels);

// One-vs-rest AUC per class (rank statistic, ties get average rank), weighted
// by class support. Classes absent from labels are excluded and the remaining
// weights renormalized, with one warning on stderr.
double weighted_auc(const std::vector<float>& scores, const std::vector<int>& labels, int num_classes);

// Support-weighted F1; a class's F1 is 0 when precision + recall is 0.
double weighted_f1(const std::vector<int>& preds, const std::vector<int>& labels, int num_classes);

struct MetricsRecord {
  std::string run_id;
  int round = 0;
  std::string strategy;
  int client_id = -1;
  int group_id = -1;
  std::string role;   // "train" or "heldout"
  std::string split;  // "local-train" or "local-test"
  double accuracy = 0.0;
  double weighted_auc = 0.0;
  double weighted_f1 = 0.0;
};

struct GroupStat {
  int group = -1;
  int round = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population
  int count = 0;
};

// Mean and population std of record accuracy per (group, round).
std::vector<GroupStat> groupwise_summary(const std::vector<MetricsRecord>& records);

// Top-2 PCA of the row vectors with a deterministic sign convention (each
// eigenvector's largest-magnitude component is positive). Zero-variance input
// maps to the origin.
TensorT<double> project_preferences(const TensorT<double>& points);

// Adjusted Rand index between seeded k-means (k = number of distinct groups,
// best inertia of 10 restarts) on the points and the given group labels.
double preference_cluster_agreement(const TensorT<double>& points, const std::vector<int>& groups,
                                    uint64_t seed);

// Plain ARI between two labelings.
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

// Lloyd k-means with k-means++ seeding; returns assignments.
std::vector<int> kmeans_assign(const TensorT<double>& points, int k, int restarts, uint64_t seed);

void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> read_metrics_csv(const std::string& path);

struct ProjectionRow {
  std::string run_id;
  int round = 0;
  int sample_id = 0;
  int group_id = 0;
  double x = 0.0;
  double y = 0.0;
};

void write_projections_csv(const std::string& path, const std::vector<ProjectionRow>& rows);

// Fixed shortest round-trip formatting shared by every CSV writer.
std::string format_double(double v);

}  // namespace fedvc
