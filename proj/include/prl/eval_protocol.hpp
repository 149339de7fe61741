// SPDX-License-Identifier: Apache-2.0
//
// Label-free reporting (latest snapshot), the label-selected oracle kept
// for contrast, threshold and stability analyses, and the experiment grid.
// Everything here consumes finished training logs only.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "prl/data.hpp"
#include "prl/trainer.hpp"

namespace prl {

/// Target accuracy of the final epoch.
double latest_snapshot_report(const TrainingLog& log);

/// Best accuracy and the first epoch reaching it. Uses target labels for
/// selection, so it is only ever reported as an oracle column.
struct OracleSelection {
  double accuracy = 0.0;
  int epoch = 0;
};
OracleSelection best_snapshot_oracle(const TrainingLog& log);

struct ThresholdHit {
  double accuracy = 0.0;
  int epoch = 0;
};
/// First epoch whose reported MMD is <= threshold, if any.
std::optional<ThresholdHit> accuracy_at_mmd_threshold(const TrainingLog& log, double threshold);

struct Stability {
  /// Population std of the last `window` accuracies.
  double trailing_std = 0.0;
  /// Largest single-epoch accuracy drop, 0 if never decreasing.
  double max_drop = 0.0;
};
Stability stability_metrics(const TrainingLog& log, int window);

/// Smallest reported MMD every log reaches: max over logs of each log's minimum.
double minimal_common_mmd(const std::vector<const TrainingLog*>& logs);

struct TaskSpec {
  std::string name;
  DatasetSpec source;
  DatasetSpec target;
};

struct MethodSpec {
  std::string name;
  ArchitectureKind architecture = ArchitectureKind::prl;
  ScheduleKind schedule = schedule::Naive{};
  LossWeights weights;
};

struct GridSpec {
  std::vector<TaskSpec> tasks;
  std::vector<MethodSpec> methods;
  std::vector<std::uint64_t> seeds;
  EncoderConfig encoder;
  PretrainConfig pretrain;
  /// Base adaptation config; each method overrides architecture, schedule and weights.
  AdaptConfig adapt;
  int stability_window = 10;
  /// Fixed MMD threshold; when absent the minimal common value of each
  /// (task, seed) is used.
  std::optional<double> mmd_threshold;
};

/// Seeds of one cell: `seed` is added to every component seed.
struct SeededConfigs {
  EncoderConfig encoder;
  PretrainConfig pretrain;
  AdaptConfig adapt;
};
SeededConfigs apply_seed(const EncoderConfig& encoder, const PretrainConfig& pretrain, const AdaptConfig& adapt,
                         std::uint64_t seed);

struct CellSummary {
  double latest_accuracy = 0.0;
  OracleSelection oracle;
  double gap = 0.0;  // latest - best, <= 0
  Stability stability;
  std::optional<double> threshold;
  std::optional<ThresholdHit> at_threshold;
};

struct CellResult {
  std::string task;
  std::string method;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  /// Target accuracy of the pretrained source model (no adaptation).
  std::optional<double> source_model_accuracy;
  TrainingLog log;
  std::optional<CellSummary> summary;  // present when target labels were available
};

/// Summary of one finished log; threshold analysis only when a threshold is given.
CellSummary summarize(const TrainingLog& log, int window, std::optional<double> threshold);

struct ReportRow {
  std::string task;
  std::string method;
  std::size_t seeds = 0;
  double latest_median = 0.0;
  double latest_std = 0.0;
  double oracle_best_median = 0.0;
  double oracle_best_std = 0.0;
  double oracle_best_epoch_median = 0.0;
  double gap_median = 0.0;
  double trailing_std_median = 0.0;
  double max_drop_median = 0.0;
  std::optional<double> acc_at_threshold_median;
  /// Median over seeds of the per-seed threshold.
  std::optional<double> threshold;
  double final_mmd_median = 0.0;
  double final_l_pr_median = 0.0;
};

struct FailureRecord {
  std::string task;
  std::string method;
  std::uint64_t seed = 0;
  std::string error;
};

struct EvalReport {
  std::vector<ReportRow> rows;
  std::vector<FailureRecord> failures;
  std::vector<CellResult> cells;
};

double median(std::vector<double> values);
/// Sample standard deviation (0 for fewer than two values), order independent.
double stddev(std::vector<double> values);

/// Aggregates successful cells into one row per (task, method) in spec
/// order, computing per-task thresholds when needed.
EvalReport assemble_report(std::vector<CellResult> cells, const GridSpec& spec);

/// Runs pretrain + adapt for every task x method x seed. Pretraining is
/// shared by all methods of a (task, seed). A failing cell is recorded and
/// the grid continues. jobs > 1 runs cells on worker threads.
EvalReport experiment_grid(const GridSpec& spec, int jobs = 1);

/// Single-cell helper shared by the grid and the CLI.
struct CellRun {
  DomainDataset source;
  DomainDataset target;
  PretrainResult pretrain;
  std::optional<double> source_model_accuracy;
  AdaptResult adaptation;
};
CellRun run_cell(const TaskSpec& task, const MethodSpec& method, std::uint64_t seed, const GridSpec& spec);

void write_report_csv(std::ostream& os, const EvalReport& report);
void write_report_json(std::ostream& os, const EvalReport& report);
/// Long form: task,method,seed,epoch,accuracy,mmd_reported.
void write_plot_data(std::ostream& os, const EvalReport& report);
/// One row per cell with the per-seed summary.
void write_cells_csv(std::ostream& os, const EvalReport& report);

}  // namespace prl
