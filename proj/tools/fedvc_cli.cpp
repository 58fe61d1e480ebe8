#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedvc/experiment.hpp"
#include "fedvc/metrics.hpp"
#include "fedvc/params.hpp"

namespace fs = std::filesystem;
using namespace fedvc;

namespace {

struct CommonFlags {
  std::string config;
  std::string out;
  std::string strategy;
  std::vector<std::string> sets;
  int64_t seed = -1;
};

ExperimentConfig resolve_config(const CommonFlags& flags) {
  ExperimentConfig cfg;
  if (!flags.config.empty()) cfg = parse_config_file(flags.config);
  for (const auto& kv : flags.sets) apply_override(cfg, kv);
  if (!flags.strategy.empty()) cfg.strategy = flags.strategy;
  if (flags.seed >= 0) cfg.seed = (uint64_t)flags.seed;
  if (!flags.out.empty()) cfg.out = flags.out;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config, "JSON config file");
  cmd->add_option("--seed", flags.seed, "Master seed (overrides config)");
  cmd->add_option("--out", flags.out, "Output directory");
  cmd->add_option("--strategy", flags.strategy, "Strategy (overrides config)");
  cmd->add_option("--set", flags.sets, "Dotted override key=value (repeatable)")->take_all();
}

int cmd_run(const CommonFlags& flags) {
  ExperimentConfig cfg = resolve_config(flags);
  RunResult result = run_experiment(cfg, cfg.out);
  auto rows = summarize(result.final_eval);
  std::cout << "run " << cfg.resolved_run_id() << " (" << cfg.strategy << ", seed " << cfg.seed
            << ") finished after " << result.rounds.size() << " rounds\n"
            << summary_table(rows);
  if (result.ari > -2.0) std::cout << "cluster agreement (ARI): " << format_double(result.ari) << "\n";
  std::cout << "artifacts in " << cfg.out << "\n";
  return 0;
}

int cmd_sweep(const CommonFlags& flags, const std::string& axis, const std::string& values_csv,
              const char* argv0) {
  if (axis.empty() || values_csv.empty())
    throw std::invalid_argument("sweep: --axis and --values are required");
  ExperimentConfig base = resolve_config(flags);

  std::vector<std::string> values;
  std::stringstream ss(values_csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) values.push_back(item);
  }
  if (values.empty()) throw std::invalid_argument("sweep: empty --values");

  fs::create_directories(base.out);
  std::string cfg_path = (fs::path(base.out) / "sweep_base.json").string();
  {
    std::ofstream f(cfg_path);
    f << config_to_json(base);
  }

  struct SweepRow {
    std::string value;
    std::vector<SummaryRow> rows;
    double ari;
  };
  std::vector<SweepRow> table;
  for (const auto& v : values) {
    // Each run validates the override eagerly, then executes in its own
    // process for isolation.
    {
      ExperimentConfig probe = base;
      apply_override(probe, axis + "=" + v);
      probe.validate();
    }
    std::string run_dir = (fs::path(base.out) / (axis.substr(axis.rfind('.') + 1) + "_" + v)).string();
    std::ostringstream cmd;
    cmd << '"' << argv0 << '"' << " run --config \"" << cfg_path << "\" --out \"" << run_dir
        << "\" --set " << axis << '=' << v;
    int rc = std::system(cmd.str().c_str());
    if (rc != 0) throw std::runtime_error("sweep: child run failed for " + axis + "=" + v);
    if (!fs::exists(fs::path(run_dir) / "DONE"))
      throw std::runtime_error("sweep: child run left no DONE sentinel for " + axis + "=" + v);

    std::ifstream sc(fs::path(run_dir) / "summary.csv");
    std::string line;
    std::getline(sc, line);
    SweepRow row;
    row.value = v;
    row.ari = -2.0;
    while (std::getline(sc, line)) {
      std::stringstream ls(line);
      std::vector<std::string> fields;
      std::string field;
      while (std::getline(ls, field, ',')) fields.push_back(field);
      if (fields.size() < 10) continue;
      SummaryRow sr;
      sr.strategy = fields[0];
      sr.role = fields[1];
      sr.clients = std::stoi(fields[2]);
      sr.acc_mean = std::strtod(fields[3].c_str(), nullptr);
      sr.acc_std = std::strtod(fields[4].c_str(), nullptr);
      sr.auc_mean = std::strtod(fields[5].c_str(), nullptr);
      sr.auc_std = std::strtod(fields[6].c_str(), nullptr);
      sr.f1_mean = std::strtod(fields[7].c_str(), nullptr);
      sr.f1_std = std::strtod(fields[8].c_str(), nullptr);
      row.ari = std::strtod(fields[9].c_str(), nullptr);
      row.rows.push_back(sr);
    }
    table.push_back(std::move(row));
  }

  std::ofstream out(fs::path(base.out) / "sweep_table.csv");
  out << axis << ",role,clients,acc_mean,acc_std,auc_mean,auc_std,f1_mean,f1_std,ari\n";
  std::cout << "sweep over " << axis << "\n";
  std::cout << "value        role        acc mean (std)      auc mean        f1 mean\n";
  for (const auto& row : table) {
    for (const auto& sr : row.rows) {
      out << row.value << ',' << sr.role << ',' << sr.clients << ',' << format_double(sr.acc_mean)
          << ',' << format_double(sr.acc_std) << ',' << format_double(sr.auc_mean) << ','
          << format_double(sr.auc_std) << ',' << format_double(sr.f1_mean) << ','
          << format_double(sr.f1_std) << ',' << format_double(row.ari) << '\n';
      char line[256];
      std::snprintf(line, sizeof(line), "%-12s %-11s %.4f (%.4f)    %.4f          %.4f\n",
                    row.value.c_str(), sr.role == "train" ? "tr-clients" : "ts-clients", sr.acc_mean,
                    sr.acc_std, sr.auc_mean, sr.f1_mean);
      std::cout << line;
    }
  }
  std::cout << "table written to " << (fs::path(base.out) / "sweep_table.csv").string() << "\n";
  return 0;
}

int cmd_inspect(const std::string& path) {
  ParamSet params = load_params_file(path);
  std::printf("%-24s %-14s %10s %12s %12s %12s %12s\n", "name", "shape", "numel", "min", "max", "mean",
              "l2norm");
  for (const auto& [name, t] : params) {
    double mn = t.data[0], mx = t.data[0], mean = 0.0, sq = 0.0;
    for (float v : t.data) {
      mn = std::min(mn, (double)v);
      mx = std::max(mx, (double)v);
      mean += v;
      sq += (double)v * v;
    }
    mean /= t.numel();
    std::ostringstream shape;
    for (size_t i = 0; i < t.shape.size(); ++i) shape << (i ? "x" : "") << t.shape[i];
    std::printf("%-24s %-14s %10ld %12.5g %12.5g %12.5g %12.5g\n", name.c_str(), shape.str().c_str(),
                t.numel(), mn, mx, mean, std::sqrt(sq));
  }
  return 0;
}

int cmd_partition_audit(const CommonFlags& flags) {
  ExperimentConfig cfg = resolve_config(flags);
  BuiltExperiment built = build_experiment(cfg);
  built.partition.validate(built.data);

  int groups = built.partition.num_groups;
  std::vector<std::vector<long>> hist(groups + 1, std::vector<long>(built.data.num_classes, 0));
  std::vector<int> participants(groups + 1, 0), heldout(groups + 1, 0);
  for (const auto& c : built.partition.clients) {
    (c.role == ClientRole::kTrainParticipant ? participants : heldout)[c.group] += 1;
    for (const auto* list : {&c.train_idx, &c.test_idx})
      for (int idx : *list) hist[c.group][built.data.labels[idx]] += 1;
  }

  std::cout << "partition audit: " << built.partition.clients.size() << " clients, " << groups
            << " groups, dataset n=" << built.data.n << "\n";
  for (int g = 0; g <= groups; ++g) {
    if (participants[g] + heldout[g] == 0) continue;
    long total = 0;
    for (long v : hist[g]) total += v;
    std::cout << "group " << g << (g == groups ? " (mixed)" : "") << ": " << participants[g]
              << " train / " << heldout[g] << " heldout clients, " << total << " samples, class histogram [";
    for (int c = 0; c < built.data.num_classes; ++c) std::cout << (c ? " " : "") << hist[g][c];
    std::cout << "]\n";
  }
  if (!cfg.out.empty()) {
    fs::create_directories(cfg.out);
    std::ofstream mf(fs::path(cfg.out) / "partition_manifest.txt");
    mf << built.partition.manifest();
    std::cout << "manifest written to " << (fs::path(cfg.out) / "partition_manifest.txt").string()
              << "\n";
  }
  std::cout << "partition OK\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated virtual-concept personalization simulator"};
  app.require_subcommand(1);

  CommonFlags run_flags, sweep_flags, audit_flags;
  std::string axis, values_csv, ckpt_path;

  CLI::App* run = app.add_subcommand("run", "Train one experiment and emit artifacts");
  add_common(run, run_flags);

  CLI::App* sweep = app.add_subcommand("sweep", "One run per value of a single hyperparameter axis");
  add_common(sweep, sweep_flags);
  sweep->add_option("--axis", axis, "Dotted config key, e.g. concepts.iota")->required();
  sweep->add_option("--values", values_csv, "Comma-separated values")->required();

  CLI::App* inspect = app.add_subcommand("inspect-ckpt", "Describe a checkpoint's tensors");
  inspect->add_option("path", ckpt_path, "Checkpoint file")->required();

  CLI::App* audit = app.add_subcommand("partition-audit", "Build and verify a client partition");
  add_common(audit, audit_flags);

  try {
    app.parse(argc, argv);
    if (run->parsed()) return cmd_run(run_flags);
    if (sweep->parsed()) return cmd_sweep(sweep_flags, axis, values_csv, argv[0]);
    if (inspect->parsed()) return cmd_inspect(ckpt_path);
    if (audit->parsed()) return cmd_partition_audit(audit_flags);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
