// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <random>
#include <sstream>

#include <doctest.h>

#include "prl/eval_protocol.hpp"

using namespace prl;

namespace {

TrainingLog make_log(const std::vector<double>& acc, std::vector<double> mmd = {}) {
  if (mmd.empty()) mmd.assign(acc.size(), 1.0);
  TrainingLog log;
  for (std::size_t e = 0; e < acc.size(); ++e) {
    EpochRecord r;
    r.epoch = static_cast<int>(e);
    r.target_accuracy = acc[e];
    r.mmd_reported = mmd[e];
    log.records.push_back(r);
  }
  return log;
}

CellResult cell(std::string task, std::string method, std::uint64_t seed, TrainingLog log) {
  CellResult c;
  c.task = std::move(task);
  c.method = std::move(method);
  c.seed = seed;
  c.ok = true;
  c.log = std::move(log);
  return c;
}

GridSpec small_grid() {
  GridSpec g;
  TwoMoonsSpec s;
  s.n = 120;
  s.shift.seed = 1;
  TwoMoonsSpec t = s;
  t.shift.seed = 2;
  t.shift.rotation_deg = 30;
  g.tasks.push_back({"moons", s, t});
  g.methods.push_back({"inturn", ArchitectureKind::prl, schedule::InTurn{1}, {0.1, NormKind::l1}});
  g.seeds = {0};
  g.encoder.hidden_dims = {8};
  g.pretrain.epochs = 5;
  g.pretrain.lr = 0.05;
  g.pretrain.batch_size = 32;
  g.adapt.epochs = 4;
  g.adapt.lr = 0.05;
  g.adapt.batch_size = 32;
  g.adapt.mmd = {KernelKind::linear, 1.0};
  g.stability_window = 3;
  return g;
}

std::string report_text(const EvalReport& r) {
  std::ostringstream os;
  write_report_csv(os, r);
  write_cells_csv(os, r);
  write_report_json(os, r);
  write_plot_data(os, r);
  return os.str();
}

}  // namespace

TEST_CASE("latest snapshot report") {
  CHECK(latest_snapshot_report(make_log({0.5, 0.7, 0.6})) == 0.6);
  CHECK(latest_snapshot_report(make_log({0.42})) == 0.42);
  CHECK_THROWS(latest_snapshot_report(TrainingLog{}));
}

TEST_CASE("oracle picks the first best epoch") {
  const OracleSelection o = best_snapshot_oracle(make_log({0.5, 0.7, 0.6}));
  CHECK(o.accuracy == 0.7);
  CHECK(o.epoch == 1);
  CHECK(best_snapshot_oracle(make_log({0.1, 0.2, 0.3})).epoch == 2);
  const OracleSelection c = best_snapshot_oracle(make_log({0.4, 0.4, 0.4}));
  CHECK(c.accuracy == 0.4);
  CHECK(c.epoch == 0);
  CHECK_THROWS(best_snapshot_oracle(TrainingLog{}));
  for (const auto& acc : {std::vector<double>{0.3, 0.9, 0.1}, std::vector<double>{0.5}})
    CHECK(best_snapshot_oracle(make_log(acc)).accuracy >= latest_snapshot_report(make_log(acc)));
}

TEST_CASE("accuracy at the first MMD crossing") {
  const TrainingLog log = make_log({0.5, 0.6, 0.62, 0.61}, {0.01, 0.004, 0.002, 0.0015});
  const auto hit = accuracy_at_mmd_threshold(log, 0.002);
  REQUIRE(hit.has_value());
  CHECK(hit->accuracy == 0.62);
  CHECK(hit->epoch == 2);
  CHECK_FALSE(accuracy_at_mmd_threshold(log, 0.001).has_value());
}

TEST_CASE("stability metrics") {
  const Stability flat = stability_metrics(make_log({0.73, 0.73, 0.73, 0.73}), 3);
  CHECK(flat.trailing_std == 0.0);
  CHECK(flat.max_drop == 0.0);
  CHECK(stability_metrics(make_log({0.6, 0.8, 0.5}), 2).max_drop == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(stability_metrics(make_log({0.5, 0.70, 0.72}), 2).trailing_std == doctest::Approx(0.01).epsilon(1e-12));
  CHECK_THROWS(stability_metrics(make_log({0.5, 0.6}), 1));
  CHECK_THROWS(stability_metrics(make_log({0.5, 0.6}), 3));
}

TEST_CASE("minimal common MMD") {
  const TrainingLog a = make_log({0, 0, 0}, {0.5, 0.1, 0.2});
  const TrainingLog b = make_log({0, 0}, {0.3, 0.05});
  CHECK(minimal_common_mmd({&a, &b}) == 0.1);
  CHECK_THROWS(minimal_common_mmd({}));
}

TEST_CASE("median and standard deviation") {
  CHECK(median({3, 1, 2}) == 2);
  CHECK(median({4, 1, 2, 3}) == 2.5);
  CHECK_THROWS(median({}));
  CHECK(stddev({0.7, 0.7, 0.7}) == 0.0);
  CHECK(stddev({1.0}) == 0.0);
  CHECK(stddev({1, 2, 3, 4}) == doctest::Approx(1.2909944487358056).epsilon(1e-14));
  CHECK(stddev({0.1, 0.9, 0.35}) == stddev({0.9, 0.35, 0.1}));
}

TEST_CASE("report rows, failures and thresholds") {
  GridSpec spec;
  spec.tasks.push_back({"t", TwoMoonsSpec{}, TwoMoonsSpec{}});
  spec.methods = {{"src", ArchitectureKind::source_only, schedule::Naive{}, {0.0, NormKind::l1}},
                  {"a", ArchitectureKind::prl, schedule::Naive{}, {1.0, NormKind::l1}},
                  {"b", ArchitectureKind::prl, schedule::InTurn{1}, {1.0, NormKind::l1}},
                  {"c", ArchitectureKind::single_encoder, schedule::Naive{}, {0.0, NormKind::l1}}};
  spec.seeds = {0};
  spec.stability_window = 2;

  std::vector<CellResult> cells;
  cells.push_back(cell("t", "src", 0, make_log({0.5, 0.5, 0.5}, {0.001, 0.001, 0.001})));
  cells.push_back(cell("t", "a", 0, make_log({0.5, 0.7, 0.6}, {0.3, 0.2, 0.1})));
  cells.push_back(cell("t", "b", 0, make_log({0.6, 0.65, 0.66}, {0.3, 0.05, 0.04})));
  CellResult failed = cell("t", "c", 0, {});
  failed.ok = false;
  failed.error = "boom";
  cells.push_back(failed);

  const EvalReport r = assemble_report(cells, spec);
  CHECK(r.rows.size() == 3);
  REQUIRE(r.failures.size() == 1);
  CHECK(r.failures[0].method == "c");
  CHECK(r.failures[0].error == "boom");

  // The source-only run stays out of the threshold; a reaches 0.1 last.
  REQUIRE(r.rows[1].threshold.has_value());
  CHECK(*r.rows[1].threshold == 0.1);
  CHECK(*r.rows[1].acc_at_threshold_median == 0.6);
  CHECK(*r.rows[2].acc_at_threshold_median == 0.65);
  CHECK(r.rows[1].latest_median == 0.6);
  CHECK(r.rows[1].oracle_best_median == 0.7);
  CHECK(r.rows[1].gap_median == doctest::Approx(-0.1).epsilon(1e-12));

  std::ostringstream os;
  write_report_csv(os, r);
  const std::string csv = os.str();
  CHECK(csv.find("latest_acc_median") != std::string::npos);
  CHECK(csv.find("oracle_best_acc_median") != std::string::npos);
  CHECK(csv.find("failed,t,c,0") != std::string::npos);
}

TEST_CASE("thresholds are taken per seed") {
  GridSpec spec;
  spec.tasks.push_back({"t", TwoMoonsSpec{}, TwoMoonsSpec{}});
  spec.methods = {{"a", ArchitectureKind::prl, schedule::Naive{}, {1.0, NormKind::l1}},
                  {"b", ArchitectureKind::prl, schedule::Naive{}, {1.0, NormKind::l1}}};
  spec.seeds = {0, 1};
  spec.stability_window = 2;
  std::vector<CellResult> cells{cell("t", "a", 0, make_log({0.1, 0.2}, {0.5, 0.2})),
                                cell("t", "b", 0, make_log({0.3, 0.4}, {0.5, 0.3})),
                                cell("t", "a", 1, make_log({0.5, 0.6}, {0.05, 0.01})),
                                cell("t", "b", 1, make_log({0.7, 0.8}, {0.05, 0.02}))};
  const EvalReport r = assemble_report(cells, spec);
  CHECK(*r.cells[0].summary->threshold == 0.3);
  CHECK(*r.cells[2].summary->threshold == 0.02);
  CHECK(r.cells[2].summary->at_threshold->accuracy == 0.6);

  spec.mmd_threshold = 0.2;
  const EvalReport fixed = assemble_report(cells, spec);
  CHECK(*fixed.cells[2].summary->threshold == 0.2);
}

TEST_CASE("aggregation ignores seed order") {
  GridSpec spec;
  spec.tasks.push_back({"t", TwoMoonsSpec{}, TwoMoonsSpec{}});
  spec.methods = {{"a", ArchitectureKind::prl, schedule::Naive{}, {1.0, NormKind::l1}}};
  spec.stability_window = 3;
  std::vector<CellResult> cells;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.4, 0.9);
  for (std::uint64_t s = 0; s < 5; ++s) {
    spec.seeds.push_back(s);
    cells.push_back(cell("t", "a", s, make_log({u(rng), u(rng), u(rng), u(rng)}, {u(rng), u(rng), u(rng), u(rng)})));
  }
  const EvalReport a = assemble_report(cells, spec);
  std::reverse(cells.begin(), cells.end());
  std::reverse(spec.seeds.begin(), spec.seeds.end());
  const EvalReport b = assemble_report(cells, spec);
  std::ostringstream x, y;
  write_report_csv(x, a);
  write_report_csv(y, b);
  CHECK(x.str() == y.str());
}

TEST_CASE("grid of one cell") {
  const GridSpec g = small_grid();
  const EvalReport r = experiment_grid(g);
  REQUIRE(r.rows.size() == 1);
  CHECK(r.failures.empty());
  CHECK(r.rows[0].seeds == 1);
  CHECK(r.cells[0].log.records.size() == 4);
  CHECK(r.cells[0].source_model_accuracy.has_value());
}

TEST_CASE("repeated seeds agree exactly") {
  GridSpec g = small_grid();
  g.seeds = {7, 7};
  const EvalReport r = experiment_grid(g);
  REQUIRE(r.rows.size() == 1);
  CHECK(r.rows[0].seeds == 2);
  CHECK(r.rows[0].latest_std == 0.0);
  CHECK(r.rows[0].oracle_best_std == 0.0);
}

TEST_CASE("a failing cell does not stop the grid") {
  GridSpec g = small_grid();
  const TaskSpec good = g.tasks[0];
  g.tasks.clear();
  for (int i = 0; i < 4; ++i) {
    TaskSpec t = good;
    t.name = "task" + std::to_string(i);
    if (i == 2) t.target = CsvSpec{"no_such_file.csv", {}};
    g.tasks.push_back(t);
  }
  const EvalReport r = experiment_grid(g);
  CHECK(r.rows.size() == 3);
  REQUIRE(r.failures.size() == 1);
  CHECK(r.failures[0].task == "task2");
  CHECK(r.failures[0].error.find("no_such_file.csv") != std::string::npos);
}

TEST_CASE("grid output is deterministic and thread-count independent") {
  GridSpec g = small_grid();
  g.seeds = {0, 1, 2};
  const std::string serial = report_text(experiment_grid(g, 1));
  CHECK(report_text(experiment_grid(g, 1)) == serial);
  CHECK(report_text(experiment_grid(g, 3)) == serial);
}

TEST_CASE("grid contract") {
  GridSpec g = small_grid();
  g.seeds.clear();
  CHECK_THROWS(experiment_grid(g));
  CHECK(apply_seed(EncoderConfig{}, PretrainConfig{}, AdaptConfig{}, 3).adapt.seed == 3);
}
