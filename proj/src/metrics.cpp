#include "fedvc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "fedvc/rng.hpp"

namespace fedvc {

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.empty() || preds.size() != labels.size())
    throw std::invalid_argument("accuracy: need equal-length nonempty inputs");
  long hits = 0;
  for (size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i];
  return double(hits) / preds.size();
}

namespace {

// Mann-Whitney AUC for one class column, ties resolved by average rank.
double binary_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  struct Entry {
    double score;
    bool positive;
  };
  std::vector<Entry> all;
  all.reserve(pos.size() + neg.size());
  for (double s : pos) all.push_back({s, true});
  for (double s : neg) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });

  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < all.size()) {
    size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    double avg_rank = 0.5 * double(i + 1 + j);  // ranks are 1-based
    for (size_t t = i; t < j; ++t)
      if (all[t].positive) rank_sum_pos += avg_rank;
    i = j;
  }
  double np = double(pos.size()), nn = double(neg.size());
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

}  // namespace

double weighted_auc(const std::vector<float>& scores, const std::vector<int>& labels, int num_classes) {
  size_t n = labels.size();
  if (n == 0) throw std::invalid_argument("weighted_auc: empty input");
  if (num_classes < 2) throw std::invalid_argument("weighted_auc: need at least 2 classes");
  if (scores.size() != n * (size_t)num_classes)
    throw std::invalid_argument("weighted_auc: score matrix shape mismatch");

  std::vector<long> support(num_classes, 0);
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw std::invalid_argument("weighted_auc: label out of range");
    support[y] += 1;
  }
  int present = 0;
  for (int c = 0; c < num_classes; ++c) present += support[c] > 0;
  if (present < 2) throw std::invalid_argument("weighted_auc: fewer than 2 classes present");
  if (present < num_classes)
    std::fprintf(stderr, "weighted_auc: %d of %d classes absent, weights renormalized\n",
                 num_classes - present, num_classes);

  double total = 0.0, weight = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    if (support[c] == 0) continue;
    std::vector<double> pos, neg;
    pos.reserve(support[c]);
    neg.reserve(n - support[c]);
    for (size_t i = 0; i < n; ++i) {
      double s = scores[i * num_classes + c];
      if (labels[i] == c)
        pos.push_back(s);
      else
        neg.push_back(s);
    }
    double w = double(support[c]) / double(n);
    total += w * binary_auc(pos, neg);
    weight += w;
  }
  return total / weight;
}

double weighted_f1(const std::vector<int>& preds, const std::vector<int>& labels, int num_classes) {
  size_t n = labels.size();
  if (n == 0 || preds.size() != n) throw std::invalid_argument("weighted_f1: need equal-length nonempty inputs");
  if (num_classes < 2) throw std::invalid_argument("weighted_f1: need at least 2 classes");
  std::vector<long> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0), support(num_classes, 0);
  for (size_t i = 0; i < n; ++i) {
    int y = labels[i], p = preds[i];
    if (y < 0 || y >= num_classes || p < 0 || p >= num_classes)
      throw std::invalid_argument("weighted_f1: label or prediction out of range");
    support[y] += 1;
    if (p == y) {
      tp[y] += 1;
    } else {
      fp[p] += 1;
      fn[y] += 1;
    }
  }
  double total = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    if (support[c] == 0) continue;
    double prec = tp[c] + fp[c] > 0 ? double(tp[c]) / (tp[c] + fp[c]) : 0.0;
    double rec = double(tp[c]) / (tp[c] + fn[c]);
    double f1 = prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    total += double(support[c]) / double(n) * f1;
  }
  return total;
}

std::vector<GroupStat> groupwise_summary(const std::vector<MetricsRecord>& records) {
  if (records.empty()) throw std::invalid_argument("groupwise_summary: no records");
  std::map<std::pair<int, int>, std::vector<double>> buckets;
  for (const auto& r : records) buckets[{r.group_id, r.round}].push_back(r.accuracy);
  std::vector<GroupStat> out;
  for (const auto& [key, vals] : buckets) {
    GroupStat st;
    st.group = key.first;
    st.round = key.second;
    st.count = (int)vals.size();
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= vals.size();
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    st.mean = mean;
    st.stddev = std::sqrt(var / vals.size());
    out.push_back(st);
  }
  return out;
}

namespace {

// Cyclic Jacobi eigensolver for a small symmetric matrix.
void jacobi_eigen(TensorT<double> a, std::vector<double>& eigenvalues, TensorT<double>& eigenvectors) {
  int d = a.shape[0];
  eigenvectors = TensorT<double>({d, d});
  for (int i = 0; i < d; ++i) eigenvectors.at(i, i) = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < d; ++i)
      for (int j = i + 1; j < d; ++j) off += a.at(i, j) * a.at(i, j);
    if (off < 1e-24) break;
    for (int p = 0; p < d; ++p) {
      for (int q = p + 1; q < d; ++q) {
        if (std::fabs(a.at(p, q)) < 1e-30) continue;
        double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * a.at(p, q));
        double t = (theta >= 0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int i = 0; i < d; ++i) {
          double aip = a.at(i, p), aiq = a.at(i, q);
          a.at(i, p) = c * aip - s * aiq;
          a.at(i, q) = s * aip + c * aiq;
        }
        for (int i = 0; i < d; ++i) {
          double api = a.at(p, i), aqi = a.at(q, i);
          a.at(p, i) = c * api - s * aqi;
          a.at(q, i) = s * api + c * aqi;
        }
        for (int i = 0; i < d; ++i) {
          double vip = eigenvectors.at(i, p), viq = eigenvectors.at(i, q);
          eigenvectors.at(i, p) = c * vip - s * viq;
          eigenvectors.at(i, q) = s * vip + c * viq;
        }
      }
    }
  }
  eigenvalues.resize(d);
  for (int i = 0; i < d; ++i) eigenvalues[i] = a.at(i, i);
}

}  // namespace

TensorT<double> project_preferences(const TensorT<double>& points) {
  if (points.rank() != 2 || points.shape[0] < 2 || points.shape[1] < 2)
    throw std::invalid_argument("project_preferences: need >= 2 samples of dim >= 2");
  int n = points.shape[0], d = points.shape[1];

  std::vector<double> mean(d, 0.0);
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < d; ++t) mean[t] += points.at(i, t);
  for (auto& m : mean) m /= n;

  TensorT<double> cov({d, d});
  for (int i = 0; i < n; ++i)
    for (int s = 0; s < d; ++s) {
      double xs = points.at(i, s) - mean[s];
      for (int t = s; t < d; ++t) cov.at(s, t) += xs * (points.at(i, t) - mean[t]);
    }
  for (int s = 0; s < d; ++s)
    for (int t = 0; t < s; ++t) cov.at(s, t) = cov.at(t, s);
  for (auto& x : cov.data) x /= n;

  double trace = 0.0;
  for (int s = 0; s < d; ++s) trace += cov.at(s, s);
  TensorT<double> out({n, 2});
  if (trace <= 0.0) return out;

  std::vector<double> evals;
  TensorT<double> evecs;
  jacobi_eigen(cov, evals, evecs);
  std::vector<int> order(d);
  for (int i = 0; i < d; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) { return evals[a] > evals[b]; });

  for (int k = 0; k < 2; ++k) {
    int col = order[k];
    int arg = 0;
    for (int t = 1; t < d; ++t)
      if (std::fabs(evecs.at(t, col)) > std::fabs(evecs.at(arg, col))) arg = t;
    double sign = evecs.at(arg, col) >= 0.0 ? 1.0 : -1.0;
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int t = 0; t < d; ++t) acc += (points.at(i, t) - mean[t]) * evecs.at(t, col);
      out.at(i, k) = sign * acc;
    }
  }
  return out;
}

std::vector<int> kmeans_assign(const TensorT<double>& points, int k, int restarts, uint64_t seed) {
  if (points.rank() != 2 || points.shape[0] < k)
    throw std::invalid_argument("kmeans_assign: need at least k points");
  int n = points.shape[0], d = points.shape[1];

  std::vector<int> best_assign(n, 0);
  double best_inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    Rng rng(derive_seed(seed, 0x6b, r));

    // k-means++ seeding
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
        dist[i] = std::min(dist[i], acc);
        total += dist[i];
      }
      int pick = (int)rng.below(n);
      if (total > 0.0) {
        double target = rng.uniform() * total, run = 0.0;
        for (int i = 0; i < n; ++i) {
          run += dist[i];
          if (run >= target) {
            pick = i;
            break;
          }
        }
      }
      for (int t = 0; t < d; ++t) centers.at(c, t) = points.at(pick, t);
    }

    std::vector<int> assign(n, -1);
    for (int iter = 0; iter < 100; ++iter) {
      bool changed = false;
      for (int i = 0; i < n; ++i) {
        int arg = 0;
        double best = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
          double acc = 0.0;
          for (int t = 0; t < d; ++t) {
            double diff = points.at(i, t) - centers.at(c, t);
            acc += diff * diff;
          }
          if (acc < best) {
            best = acc;
            arg = c;
          }
        }
        if (assign[i] != arg) {
          assign[i] = arg;
          changed = true;
        }
      }
      if (!changed && iter > 0) break;
      TensorT<double> sums({k, d});
      std::vector<int> counts(k, 0);
      for (int i = 0; i < n; ++i) {
        counts[assign[i]] += 1;
        for (int t = 0; t < d; ++t) sums.at(assign[i], t) += points.at(i, t);
      }
      for (int c = 0; c < k; ++c) {
        if (counts[c] == 0) {
          int far = (int)rng.below(n);
          for (int t = 0; t < d; ++t) centers.at(c, t) = points.at(far, t);
        } else {
          for (int t = 0; t < d; ++t) centers.at(c, t) = sums.at(c, t) / counts[c];
        }
      }
    }

    double inertia = 0.0;
    for (int i = 0; i < n; ++i)
      for (int t = 0; t < d; ++t) {
        double diff = points.at(i, t) - centers.at(assign[i], t);
        inertia += diff * diff;
      }
    if (inertia < best_inertia) {
      best_inertia = inertia;
      best_assign = assign;
    }
  }
  return best_assign;
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.empty() || a.size() != b.size())
    throw std::invalid_argument("adjusted_rand_index: need equal-length nonempty labelings");
  std::map<std::pair<int, int>, long> cells;
  std::map<int, long> rows, cols;
  for (size_t i = 0; i < a.size(); ++i) {
    cells[{a[i], b[i]}] += 1;
    rows[a[i]] += 1;
    cols[b[i]] += 1;
  }
  auto comb2 = [](long x) { return 0.5 * double(x) * double(x - 1); };
  double sum_cells = 0.0, sum_rows = 0.0, sum_cols = 0.0;
  for (const auto& [k, v] : cells) sum_cells += comb2(v);
  for (const auto& [k, v] : rows) sum_rows += comb2(v);
  for (const auto& [k, v] : cols) sum_cols += comb2(v);
  double total = comb2((long)a.size());
  double expected = sum_rows * sum_cols / total;
  double max_index = 0.5 * (sum_rows + sum_cols);
  if (std::fabs(max_index - expected) < 1e-12) return 0.0;
  return (sum_cells - expected) / (max_index - expected);
}

double preference_cluster_agreement(const TensorT<double>& points, const std::vector<int>& groups,
                                    uint64_t seed) {
  if (points.rank() != 2 || (int)groups.size() != points.shape[0])
    throw std::invalid_argument("preference_cluster_agreement: one group label per point required");
  std::set<int> distinct(groups.begin(), groups.end());
  if (distinct.size() < 2)
    throw std::invalid_argument("preference_cluster_agreement: need at least 2 distinct groups");
  auto assign = kmeans_assign(points, (int)distinct.size(), 10, seed);
  return adjusted_rand_index(assign, groups);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("metrics: cannot open " + path + " for writing");
  out << "run_id,round,strategy,client_id,group_id,role,split,accuracy,weighted_auc,weighted_f1\n";
  for (const auto& r : records) {
    out << r.run_id << ',' << r.round << ',' << r.strategy << ',' << r.client_id << ',' << r.group_id
        << ',' << r.role << ',' << r.split << ',' << format_double(r.accuracy) << ','
        << format_double(r.weighted_auc) << ',' << format_double(r.weighted_f1) << '\n';
  }
  if (!out) throw std::runtime_error("metrics: write failed for " + path);
}

std::vector<MetricsRecord> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("metrics: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("metrics: empty file " + path);
  std::vector<MetricsRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 10) throw std::runtime_error("metrics: malformed row in " + path);
    MetricsRecord r;
    r.run_id = fields[0];
    r.round = std::stoi(fields[1]);
    r.strategy = fields[2];
    r.client_id = std::stoi(fields[3]);
    r.group_id = std::stoi(fields[4]);
    r.role = fields[5];
    r.split = fields[6];
    r.accuracy = std::strtod(fields[7].c_str(), nullptr);
    r.weighted_auc = std::strtod(fields[8].c_str(), nullptr);
    r.weighted_f1 = std::strtod(fields[9].c_str(), nullptr);
    out.push_back(std::move(r));
  }
  return out;
}

void write_projections_csv(const std::string& path, const std::vector<ProjectionRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("metrics: cannot open " + path + " for writing");
  out << "run_id,round,sample_id,group_id,x,y\n";
  for (const auto& r : rows)
    out << r.run_id << ',' << r.round << ',' << r.sample_id << ',' << r.group_id << ','
        << format_double(r.x) << ',' << format_double(r.y) << '\n';
  if (!out) throw std::runtime_error("metrics: write failed for " + path);
}

}  // namespace fedvc
