// SPDX-License-Identifier: Apache-2.0
//
// Command implementations behind the `prl` executable. They take parsed
// flags and streams so tests can drive them without a process boundary.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace prl {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 1;
inline constexpr int kExitRuntimeError = 2;
/// selftest: some check failed.
inline constexpr int kExitCheckFailed = 1;

struct CommandOptions {
  std::filesystem::path config;
  /// "a.b=value" assignments applied after --seed and --out-dir.
  std::vector<std::string> overrides;
  int jobs = 1;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  /// Self-test only: "l1-sign" flips the analytic L1 reference gradient.
  std::optional<std::string> inject_fault;
};

/// Pretrain, adapt and report one configuration. Writes manifest.json,
/// log.csv, pretrain.csv, report.csv, report.json, cells.csv, plotdata.csv
/// and snapshots/ under out_dir.
int cmd_run(const CommandOptions& opts, std::ostream& out, std::ostream& err);

/// Every task x method x seed cell of a grid config. Exit 0 when at least
/// one cell succeeded.
int cmd_grid(const CommandOptions& opts, std::ostream& out, std::ostream& err);

/// Gradient checks, MMD oracles and schedule tables. Exit 0 iff all pass.
int cmd_selftest(const CommandOptions& opts, std::ostream& out, std::ostream& err);

/// Writes the configured source and target datasets as CSV.
int cmd_gen_data(const CommandOptions& opts, std::ostream& out, std::ostream& err);

/// Label-free kernel width choice over width_selection.candidates.
int cmd_select_width(const CommandOptions& opts, std::ostream& out, std::ostream& err);

/// 64-bit FNV-1a, used for config fingerprints in manifests.
std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace prl
