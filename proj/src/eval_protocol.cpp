// SPDX-License-Identifier: Apache-2.0

#include "prl/eval_protocol.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

namespace prl {

double latest_snapshot_report(const TrainingLog& log) {
  if (log.records.empty()) throw Error("latest_snapshot_report: empty log");
  const auto& last = log.records.back();
  if (!last.target_accuracy) throw Error("latest_snapshot_report: final epoch has no target accuracy");
  return *last.target_accuracy;
}

OracleSelection best_snapshot_oracle(const TrainingLog& log) {
  if (log.records.empty()) throw Error("best_snapshot_oracle: empty log");
  const auto acc = log.accuracies();
  const auto it = std::max_element(acc.begin(), acc.end());  // first maximum
  return {*it, log.records[static_cast<std::size_t>(it - acc.begin())].epoch};
}

std::optional<ThresholdHit> accuracy_at_mmd_threshold(const TrainingLog& log, double threshold) {
  if (!(threshold > 0.0)) throw Error("accuracy_at_mmd_threshold: threshold must be positive");
  for (const auto& r : log.records) {
    if (r.mmd_reported <= threshold) {
      if (!r.target_accuracy) throw Error(fmt::format("accuracy_at_mmd_threshold: epoch {} has no accuracy", r.epoch));
      return ThresholdHit{*r.target_accuracy, r.epoch};
    }
  }
  return std::nullopt;
}

Stability stability_metrics(const TrainingLog& log, int window) {
  const auto acc = log.accuracies();
  if (window < 2 || static_cast<std::size_t>(window) > acc.size()) {
    throw Error(fmt::format("stability_metrics: window {} outside [2, {}]", window, acc.size()));
  }
  Stability s;
  const auto tail = std::span<const double>(acc).last(static_cast<std::size_t>(window));
  // Deviations are taken from the first value so a constant tail gives exactly 0.
  const double pivot = tail.front();
  double mean = 0.0;
  for (double a : tail) mean += a - pivot;
  mean /= static_cast<double>(tail.size());
  double var = 0.0;
  for (double a : tail) var += (a - pivot - mean) * (a - pivot - mean);
  s.trailing_std = std::sqrt(var / static_cast<double>(tail.size()));
  for (std::size_t e = 0; e + 1 < acc.size(); ++e) s.max_drop = std::max(s.max_drop, acc[e] - acc[e + 1]);
  return s;
}

double minimal_common_mmd(const std::vector<const TrainingLog*>& logs) {
  if (logs.empty()) throw Error("minimal_common_mmd: no logs");
  double common = 0.0;
  for (const TrainingLog* log : logs) {
    if (log->records.empty()) throw Error("minimal_common_mmd: empty log");
    const auto h = log->mmd_history();
    common = std::max(common, *std::min_element(h.begin(), h.end()));
  }
  return common;
}

SeededConfigs apply_seed(const EncoderConfig& encoder, const PretrainConfig& pretrain, const AdaptConfig& adapt,
                         std::uint64_t seed) {
  SeededConfigs out{encoder, pretrain, adapt};
  out.encoder.init_seed += seed;
  out.pretrain.seed += seed;
  out.adapt.seed += seed;
  return out;
}

CellSummary summarize(const TrainingLog& log, int window, std::optional<double> threshold) {
  CellSummary s;
  s.latest_accuracy = latest_snapshot_report(log);
  s.oracle = best_snapshot_oracle(log);
  s.gap = s.latest_accuracy - s.oracle.accuracy;
  s.stability = stability_metrics(log, std::min<int>(window, static_cast<int>(log.records.size())));
  s.threshold = threshold;
  if (threshold && *threshold > 0.0) s.at_threshold = accuracy_at_mmd_threshold(log, *threshold);
  return s;
}

double median(std::vector<double> values) {
  if (values.empty()) throw Error("median of empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double stddev(std::vector<double> values) {
  if (values.size() < 2) return 0.0;
  std::sort(values.begin(), values.end());
  const double pivot = values.front();
  double mean = 0.0;
  for (double v : values) mean += v - pivot;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - pivot - mean) * (v - pivot - mean);
  return std::sqrt(var / static_cast<double>(values.size() - 1));
}

// ---------------------------------------------------------------------------
// Cells

namespace {

struct PretrainedTask {
  DomainDataset source;
  DomainDataset target;
  PretrainResult pretrain;
  std::optional<double> source_model_accuracy;
};

PretrainedTask prepare(const TaskSpec& task, std::uint64_t seed, const SeededConfigs& seeded) {
  DomainDataset source = materialize(task.source, seed, task.name + "/source");
  DomainDataset target = materialize(task.target, seed, task.name + "/target");
  EncoderConfig enc = seeded.encoder;
  enc.input_dim = source.dim();
  PretrainResult pre = pretrain_source(source, enc, seeded.pretrain);
  std::optional<double> acc;
  if (target.labeled()) acc = evaluate_accuracy(pre.encoder, pre.params, pre.classifier, target);
  return PretrainedTask{std::move(source), std::move(target), std::move(pre), acc};
}

AdaptConfig method_config(const AdaptConfig& base, const MethodSpec& method) {
  AdaptConfig cfg = base;
  cfg.architecture = method.architecture;
  cfg.schedule = method.schedule;
  cfg.weights = method.weights;
  return cfg;
}

AdaptResult adapt_on(const PretrainedTask& prepared, const AdaptConfig& cfg) {
  const UnlabeledDataset target(prepared.target);
  std::optional<TargetEvaluator> evaluator;
  if (prepared.target.labeled()) evaluator.emplace(prepared.target);
  return adapt(prepared.pretrain.encoder, prepared.pretrain.params, prepared.pretrain.classifier, prepared.source,
               target, cfg, evaluator ? &*evaluator : nullptr);
}

}  // namespace

CellRun run_cell(const TaskSpec& task, const MethodSpec& method, std::uint64_t seed, const GridSpec& spec) {
  const SeededConfigs seeded = apply_seed(spec.encoder, spec.pretrain, spec.adapt, seed);
  PretrainedTask prepared = prepare(task, seed, seeded);
  AdaptResult adaptation = adapt_on(prepared, method_config(seeded.adapt, method));
  return CellRun{std::move(prepared.source), std::move(prepared.target), std::move(prepared.pretrain),
                 prepared.source_model_accuracy, std::move(adaptation)};
}

EvalReport assemble_report(std::vector<CellResult> cells, const GridSpec& spec) {
  EvalReport report;
  // Thresholds are per (task, seed): the smallest MMD every adapting method
  // of that seed reaches.
  std::map<std::pair<std::string, std::uint64_t>, std::optional<double>> thresholds;
  for (const auto& task : spec.tasks) {
    for (const auto seed : spec.seeds) {
      const auto key = std::make_pair(task.name, seed);
      if (spec.mmd_threshold) {
        thresholds[key] = spec.mmd_threshold;
        continue;
      }
      std::vector<const TrainingLog*> logs;
      for (const auto& c : cells) {
        if (!c.ok || c.task != task.name || c.seed != seed || c.log.records.empty()) continue;
        const auto m = std::find_if(spec.methods.begin(), spec.methods.end(),
                                    [&](const MethodSpec& ms) { return ms.name == c.method; });
        if (m != spec.methods.end() && m->architecture == ArchitectureKind::source_only) continue;
        logs.push_back(&c.log);
      }
      thresholds[key] = logs.empty() ? std::nullopt : std::optional<double>(minimal_common_mmd(logs));
    }
  }

  for (auto& c : cells) {
    if (!c.ok) {
      report.failures.push_back({c.task, c.method, c.seed, c.error});
      continue;
    }
    if (c.log.has_accuracy()) c.summary = summarize(c.log, spec.stability_window, thresholds[{c.task, c.seed}]);
  }

  for (const auto& task : spec.tasks) {
    for (const auto& method : spec.methods) {
      std::vector<const CellResult*> group;
      for (const auto& c : cells)
        if (c.ok && c.task == task.name && c.method == method.name && c.summary) group.push_back(&c);
      if (group.empty()) continue;
      auto collect = [&](auto fn) {
        std::vector<double> v;
        for (const auto* c : group) v.push_back(fn(*c));
        return v;
      };
      ReportRow row;
      row.task = task.name;
      row.method = method.name;
      row.seeds = group.size();
      const auto latest = collect([](const CellResult& c) { return c.summary->latest_accuracy; });
      const auto best = collect([](const CellResult& c) { return c.summary->oracle.accuracy; });
      row.latest_median = median(latest);
      row.latest_std = stddev(latest);
      row.oracle_best_median = median(best);
      row.oracle_best_std = stddev(best);
      row.oracle_best_epoch_median =
          median(collect([](const CellResult& c) { return static_cast<double>(c.summary->oracle.epoch); }));
      row.gap_median = median(collect([](const CellResult& c) { return c.summary->gap; }));
      row.trailing_std_median = median(collect([](const CellResult& c) { return c.summary->stability.trailing_std; }));
      row.max_drop_median = median(collect([](const CellResult& c) { return c.summary->stability.max_drop; }));
      row.final_mmd_median = median(collect([](const CellResult& c) { return c.log.records.back().mmd_reported; }));
      row.final_l_pr_median = median(collect([](const CellResult& c) { return c.log.records.back().l_pr; }));
      std::vector<double> seed_thresholds;
      for (const auto* c : group)
        if (c->summary->threshold) seed_thresholds.push_back(*c->summary->threshold);
      if (!seed_thresholds.empty()) row.threshold = median(seed_thresholds);
      std::vector<double> hits;
      for (const auto* c : group)
        if (c->summary->at_threshold) hits.push_back(c->summary->at_threshold->accuracy);
      if (!hits.empty()) row.acc_at_threshold_median = median(hits);
      report.rows.push_back(std::move(row));
    }
  }
  report.cells = std::move(cells);
  return report;
}

EvalReport experiment_grid(const GridSpec& spec, int jobs) {
  if (spec.tasks.empty() || spec.methods.empty() || spec.seeds.empty()) {
    throw Error("experiment_grid: tasks, methods and seeds must be non-empty");
  }
  for (const auto& m : spec.methods) method_config(spec.adapt, m).validate();

  struct Group {
    std::size_t task;
    std::size_t seed;
  };
  std::vector<Group> groups;
  for (std::size_t t = 0; t < spec.tasks.size(); ++t)
    for (std::size_t s = 0; s < spec.seeds.size(); ++s) groups.push_back({t, s});

  const std::size_t n_methods = spec.methods.size();
  std::vector<CellResult> cells(groups.size() * n_methods);

  auto run_group = [&](std::size_t g) {
    const TaskSpec& task = spec.tasks[groups[g].task];
    const std::uint64_t seed = spec.seeds[groups[g].seed];
    for (std::size_t m = 0; m < n_methods; ++m) {
      CellResult& c = cells[g * n_methods + m];
      c.task = task.name;
      c.method = spec.methods[m].name;
      c.seed = seed;
    }
    const SeededConfigs seeded = apply_seed(spec.encoder, spec.pretrain, spec.adapt, seed);
    std::optional<PretrainedTask> prepared;
    std::string prep_error;
    try {
      prepared.emplace(prepare(task, seed, seeded));
    } catch (const std::exception& e) {
      prep_error = e.what();
    }
    for (std::size_t m = 0; m < n_methods; ++m) {
      CellResult& c = cells[g * n_methods + m];
      if (!prepared) {
        c.error = prep_error;
        continue;
      }
      try {
        AdaptResult r = adapt_on(*prepared, method_config(seeded.adapt, spec.methods[m]));
        c.log = std::move(r.log);
        c.source_model_accuracy = prepared->source_model_accuracy;
        c.ok = true;
      } catch (const std::exception& e) {
        c.error = e.what();
      }
    }
  };

  const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), 1, groups.size());
  if (workers == 1) {
    for (std::size_t g = 0; g < groups.size(); ++g) run_group(g);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t g = next++; g < groups.size(); g = next++) run_group(g);
      });
    }
    for (auto& t : pool) t.join();
  }
  return assemble_report(std::move(cells), spec);
}

// ---------------------------------------------------------------------------
// Output

namespace {

std::string num(double v) { return fmt::format("{:.17g}", v); }
std::string num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

}  // namespace

void write_report_csv(std::ostream& os, const EvalReport& report) {
  os << "status,task,method,seeds,latest_acc_median,latest_acc_std,oracle_best_acc_median,oracle_best_acc_std,"
        "oracle_best_epoch_median,latest_minus_best_median,trailing_std_median,max_drop_median,"
        "acc_at_mmd_threshold_median,mmd_threshold,final_mmd_median,final_l_pr_median,error\n";
  for (const auto& r : report.rows) {
    os << "ok," << csv_escape(r.task) << ',' << csv_escape(r.method) << ',' << r.seeds << ',' << num(r.latest_median)
       << ',' << num(r.latest_std) << ',' << num(r.oracle_best_median) << ',' << num(r.oracle_best_std) << ','
       << num(r.oracle_best_epoch_median) << ',' << num(r.gap_median) << ',' << num(r.trailing_std_median) << ','
       << num(r.max_drop_median) << ',' << num(r.acc_at_threshold_median) << ',' << num(r.threshold) << ','
       << num(r.final_mmd_median) << ',' << num(r.final_l_pr_median) << ",\n";
  }
  for (const auto& f : report.failures) {
    os << "failed," << csv_escape(f.task) << ',' << csv_escape(f.method) << ',' << f.seed
       << ",,,,,,,,,,,,," << csv_escape(f.error) << '\n';
  }
}

void write_report_json(std::ostream& os, const EvalReport& report) {
  using nlohmann::ordered_json;
  auto opt = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
  ordered_json rows = ordered_json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"task", r.task},
                    {"method", r.method},
                    {"seeds", r.seeds},
                    {"latest_acc_median", r.latest_median},
                    {"latest_acc_std", r.latest_std},
                    {"oracle", {{"oracle", true},
                                {"best_acc_median", r.oracle_best_median},
                                {"best_acc_std", r.oracle_best_std},
                                {"best_epoch_median", r.oracle_best_epoch_median}}},
                    {"latest_minus_best_median", r.gap_median},
                    {"trailing_std_median", r.trailing_std_median},
                    {"max_drop_median", r.max_drop_median},
                    {"acc_at_mmd_threshold_median", opt(r.acc_at_threshold_median)},
                    {"mmd_threshold", opt(r.threshold)},
                    {"final_mmd_median", r.final_mmd_median},
                    {"final_l_pr_median", r.final_l_pr_median}});
  }
  ordered_json failures = ordered_json::array();
  for (const auto& f : report.failures) {
    failures.push_back({{"task", f.task}, {"method", f.method}, {"seed", f.seed}, {"error", f.error}});
  }
  ordered_json cells = ordered_json::array();
  for (const auto& c : report.cells) {
    if (!c.ok) continue;
    ordered_json cell = {{"task", c.task},
                         {"method", c.method},
                         {"seed", c.seed},
                         {"source_model_acc", opt(c.source_model_accuracy)}};
    if (c.summary) {
      cell["latest_acc"] = c.summary->latest_accuracy;
      cell["oracle_best_acc"] = c.summary->oracle.accuracy;
      cell["oracle_best_epoch"] = c.summary->oracle.epoch;
      cell["trailing_std"] = c.summary->stability.trailing_std;
      cell["max_drop"] = c.summary->stability.max_drop;
      cell["mmd_threshold"] = opt(c.summary->threshold);
      cell["acc_at_mmd_threshold"] =
          c.summary->at_threshold ? ordered_json(c.summary->at_threshold->accuracy) : ordered_json(nullptr);
    }
    cells.push_back(std::move(cell));
  }
  const ordered_json conventions = {
      {"mmd_reported", "square root of the biased squared-MMD estimate on full source and target features"},
      {"threshold", "per (task, seed): max over adapted methods of each run's minimal reported MMD; rows show the median"},
      {"std", "sample standard deviation across seeds"}};
  ordered_json doc = {{"conventions", conventions}, {"rows", rows}, {"cells", cells}, {"failures", failures}};
  os << doc.dump(2) << '\n';
}

void write_plot_data(std::ostream& os, const EvalReport& report) {
  os << "task,method,seed,epoch,accuracy,mmd_reported\n";
  for (const auto& c : report.cells) {
    if (!c.ok) continue;
    for (const auto& r : c.log.records) {
      os << csv_escape(c.task) << ',' << csv_escape(c.method) << ',' << c.seed << ',' << r.epoch << ','
         << num(r.target_accuracy) << ',' << num(r.mmd_reported) << '\n';
    }
  }
}

void write_cells_csv(std::ostream& os, const EvalReport& report) {
  os << "task,method,seed,status,source_model_acc,latest_acc,oracle_best_acc,oracle_best_epoch,latest_minus_best,"
        "trailing_std,max_drop,mmd_threshold,acc_at_mmd_threshold,error\n";
  for (const auto& c : report.cells) {
    os << csv_escape(c.task) << ',' << csv_escape(c.method) << ',' << c.seed << ',' << (c.ok ? "ok" : "failed") << ','
       << num(c.source_model_accuracy) << ',';
    if (c.summary) {
      os << num(c.summary->latest_accuracy) << ',' << num(c.summary->oracle.accuracy) << ','
         << c.summary->oracle.epoch << ',' << num(c.summary->gap) << ',' << num(c.summary->stability.trailing_std)
         << ',' << num(c.summary->stability.max_drop) << ',' << num(c.summary->threshold) << ','
         << (c.summary->at_threshold ? num(c.summary->at_threshold->accuracy) : std::string()) << ',';
    } else {
      os << ",,,,,,,,";
    }
    os << csv_escape(c.error) << '\n';
  }
}

}  // namespace prl
