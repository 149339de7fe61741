// SPDX-License-Identifier: Apache-2.0
//
// JSON run and grid configurations. Every field has a default except the
// in-turn period. Unknown keys are rejected; the resolved document is what
// goes into a run manifest.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "prl/eval_protocol.hpp"

namespace prl {

/// Invalid or incomplete configuration. `what()` names the offending field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct EvalConfig {
  int window = 10;
  std::optional<double> mmd_threshold;
};

struct WidthSelectionConfig {
  std::vector<double> candidates{0.1, 1.0, 10.0, 100.0, 1000.0};
  int epochs = 5;
};

struct RunConfig {
  std::string out_dir = "out";
  /// Added to every component seed.
  std::uint64_t seed = 0;
  EncoderConfig encoder;
  DatasetSpec source = TwoMoonsSpec{};
  DatasetSpec target = TwoMoonsSpec{};
  PretrainConfig pretrain;
  AdaptConfig adapt;
  EvalConfig eval;
  WidthSelectionConfig width_selection;
};

struct GridConfig {
  std::string out_dir = "out";
  GridSpec grid;
};

/// Dotted-path assignment, e.g. "adapt.epochs=3". The value is parsed as
/// JSON and kept as a string when that fails.
void apply_override(nlohmann::ordered_json& doc, const std::string& assignment);

nlohmann::ordered_json read_json_file(const std::filesystem::path& path);

RunConfig parse_run_config(const nlohmann::ordered_json& doc);
GridConfig parse_grid_config(const nlohmann::ordered_json& doc);

/// Fully resolved documents; parsing them back yields the same config.
nlohmann::ordered_json to_json(const RunConfig& cfg);
nlohmann::ordered_json to_json(const GridConfig& cfg);

/// The grid equivalent of a single run: one task, one method, one seed.
GridSpec single_cell_grid(const RunConfig& cfg);

}  // namespace prl
