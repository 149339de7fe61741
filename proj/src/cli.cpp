// SPDX-License-Identifier: Apache-2.0

#include "prl/cli.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "prl/config.hpp"
#include "prl/selftest.hpp"

namespace prl {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

json load_document(const CommandOptions& opts) {
  json doc = read_json_file(opts.config);
  if (!doc.is_object()) throw ConfigError(fmt::format("{}: top level must be an object", opts.config.string()));
  if (opts.out_dir) doc["out_dir"] = *opts.out_dir;
  for (const auto& o : opts.overrides) apply_override(doc, o);
  return doc;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Resolved config plus a "manifest" block; the parsers skip that block, so
// the file can be fed straight back to the same command.
void write_manifest(const fs::path& dir, json resolved, const std::string& command) {
  const std::string body = resolved.dump();
  const std::string hash = fmt::format("{:016x}", fnv1a64(command + "\n" + body));
  const std::string stamp = utc_timestamp();
  resolved["manifest"] = {{"command", command}, {"config_hash", hash}, {"run_id", hash + "-" + stamp},
                          {"created_utc", stamp}};
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << resolved.dump(2) << '\n';
  if (!out) throw Error("cannot write " + (dir / "manifest.json").string());
}

template <class F>
void write_file(const fs::path& path, F&& body) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  body(out);
  out.flush();
  if (!out) throw Error("write failed: " + path.string());
}

void write_report_files(const fs::path& dir, const EvalReport& report) {
  write_file(dir / "report.csv", [&](std::ostream& os) { write_report_csv(os, report); });
  write_file(dir / "report.json", [&](std::ostream& os) { write_report_json(os, report); });
  write_file(dir / "cells.csv", [&](std::ostream& os) { write_cells_csv(os, report); });
  write_file(dir / "plotdata.csv", [&](std::ostream& os) { write_plot_data(os, report); });
}

void write_pretrain_log(std::ostream& os, const std::vector<PretrainEpoch>& log) {
  os << "epoch,train_loss,train_acc,holdout_acc\n";
  for (const auto& e : log) {
    os << e.epoch << ',' << fmt::format("{:.17g},{:.17g},", e.train_loss, e.train_accuracy)
       << (e.holdout_accuracy ? fmt::format("{:.17g}", *e.holdout_accuracy) : std::string()) << '\n';
  }
}

// Maps exceptions onto exit codes: config problems are 1, everything else 2.
template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntimeError;
  }
}

RunConfig load_run_config(const CommandOptions& opts) {
  json doc = load_document(opts);
  if (opts.seed) doc["seed"] = *opts.seed;
  return parse_run_config(doc);
}

}  // namespace

int cmd_run(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = load_run_config(opts);
    const fs::path dir = cfg.out_dir;
    const GridSpec spec = single_cell_grid(cfg);
    fs::create_directories(dir);
    write_manifest(dir, to_json(cfg), "run");

    CellRun run = run_cell(spec.tasks[0], spec.methods[0], cfg.seed, spec);
    CellResult cell;
    cell.task = spec.tasks[0].name;
    cell.method = spec.methods[0].name;
    cell.seed = cfg.seed;
    cell.ok = true;
    cell.source_model_accuracy = run.source_model_accuracy;
    cell.log = run.adaptation.log;
    const EvalReport report = assemble_report({std::move(cell)}, spec);

    write_file(dir / "log.csv", [&](std::ostream& os) { write_log_csv(os, run.adaptation.log); });
    write_file(dir / "pretrain.csv", [&](std::ostream& os) { write_pretrain_log(os, run.pretrain.log); });
    write_file(dir / "source_model.prlparams", [&](std::ostream& os) { write_params(os, run.pretrain.params); });
    run.adaptation.snapshots.write(dir / "snapshots");
    write_report_files(dir, report);

    const auto& last = run.adaptation.log.records.back();
    out << fmt::format("run {} finished: {} epochs, final reported MMD {:.6g}, final L_PR {:.6g}", spec.methods[0].name,
                       run.adaptation.log.records.size(), last.mmd_reported, last.l_pr);
    if (last.target_accuracy) out << fmt::format(", target accuracy {:.4f}", *last.target_accuracy);
    out << "\nwrote " << dir.string() << '\n';
    return kExitOk;
  });
}

int cmd_grid(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    json doc = load_document(opts);
    if (opts.seed) doc["seeds"] = json::array({*opts.seed});
    const GridConfig cfg = parse_grid_config(doc);
    const fs::path dir = cfg.out_dir;
    fs::create_directories(dir);
    write_manifest(dir, to_json(cfg), "grid");

    const EvalReport report = experiment_grid(cfg.grid, opts.jobs);
    write_report_files(dir, report);
    for (const auto& c : report.cells) {
      if (!c.ok) continue;
      write_file(dir / "logs" / c.task / c.method / fmt::format("seed_{}.csv", c.seed),
                 [&](std::ostream& os) { write_log_csv(os, c.log); });
    }
    for (const auto& f : report.failures)
      err << fmt::format("cell {}/{}/seed {} failed: {}\n", f.task, f.method, f.seed, f.error);

    const std::size_t ok = report.cells.size() - report.failures.size();
    out << fmt::format("grid finished: {} of {} cells succeeded\nwrote {}\n", ok, report.cells.size(), dir.string());
    return ok > 0 ? kExitOk : kExitRuntimeError;
  });
}

int cmd_selftest(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  SelftestOptions st;
  if (opts.inject_fault) {
    if (*opts.inject_fault != "l1-sign") {
      err << "config error: unknown fault '" << *opts.inject_fault << "' (l1-sign)\n";
      return kExitConfigError;
    }
    st.flip_l1_gradient = true;
  }
  const auto results = run_selftest(st);
  for (const auto& r : results) {
    if (r.pass) {
      out << "PASS " << r.name << '\n';
    } else {
      out << "FAIL " << r.name << ": " << r.detail << '\n';
      err << "selftest failed: " << r.name << ": " << r.detail << '\n';
      return kExitCheckFailed;
    }
  }
  out << "selftest: " << results.size() << " checks passed\n";
  return kExitOk;
}

int cmd_gen_data(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = load_run_config(opts);
    const fs::path dir = cfg.out_dir;
    fs::create_directories(dir);
    write_manifest(dir, to_json(cfg), "gen-data");
    const DomainDataset source = materialize(cfg.source, cfg.seed, "source");
    const DomainDataset target = materialize(cfg.target, cfg.seed, "target");
    write_csv_dataset(dir / "source.csv", source);
    write_csv_dataset(dir / "target.csv", target);
    out << fmt::format("wrote {} ({} rows) and {} ({} rows)\n", (dir / "source.csv").string(), source.size(),
                       (dir / "target.csv").string(), target.size());
    return kExitOk;
  });
}

int cmd_select_width(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = load_run_config(opts);
    const fs::path dir = cfg.out_dir;
    fs::create_directories(dir);
    write_manifest(dir, to_json(cfg), "select-width");

    const SeededConfigs seeded = apply_seed(cfg.encoder, cfg.pretrain, cfg.adapt, cfg.seed);
    const DomainDataset source = materialize(cfg.source, cfg.seed, "source");
    const DomainDataset target_full = materialize(cfg.target, cfg.seed, "target");
    // Only the unlabeled view reaches the probe.
    const UnlabeledDataset target(target_full);
    EncoderConfig enc = seeded.encoder;
    enc.input_dim = source.dim();
    const PretrainResult pre = pretrain_source(source, enc, seeded.pretrain);

    const WidthProbe probe = make_width_probe(pre.encoder, pre.params, pre.classifier, source, target, seeded.adapt);
    json trajectories = json::object();
    const WidthProbe recording = [&](double width, int epochs) {
      auto t = probe(width, epochs);
      trajectories[fmt::format("{:.17g}", width)] = t;
      return t;
    };
    std::optional<double> chosen;
    std::string failure;
    try {
      chosen = select_kernel_width(cfg.width_selection.candidates, recording, cfg.width_selection.epochs);
    } catch (const Error& e) {
      failure = e.what();
    }
    json result = {{"candidates", cfg.width_selection.candidates},
                   {"epochs", cfg.width_selection.epochs},
                   {"trajectories", trajectories},
                   {"selected_width", chosen ? json(*chosen) : json(nullptr)}};
    write_file(dir / "width_selection.json", [&](std::ostream& os) { os << result.dump(2) << '\n'; });
    if (!chosen) {
      err << "error: " << failure << '\n';
      return kExitRuntimeError;
    }
    out << fmt::format("selected kernel width {:.17g}\nwrote {}\n", *chosen, (dir / "width_selection.json").string());
    return kExitOk;
  });
}

}  // namespace prl
