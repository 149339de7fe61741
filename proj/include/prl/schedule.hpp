// SPDX-License-Identifier: Apache-2.0
//
// Per-epoch learning switches for the source encoder during adaptation.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace prl {

namespace schedule {

/// Source encoder frozen for the whole adaptation.
struct Naive {};

/// Source encoder learns every epoch.
struct Simultaneous {};

/// Source frozen until the reported MMD plateaus at a small value, then
/// learning for the rest of the run.
struct Warmup {
  int patience = 5;
  double min_rel_improve = 0.02;
  /// Absolute "small value" gate. When absent it resolves to
  /// eps_small_fraction * (reported MMD before adaptation).
  std::optional<double> eps_small;
  double eps_small_fraction = 0.05;
};

/// Source frozen for k epochs, learning for k epochs, repeating.
struct InTurn {
  int k = 1;
};

}  // namespace schedule

using ScheduleKind = std::variant<schedule::Naive, schedule::Simultaneous, schedule::Warmup, schedule::InTurn>;

void validate(const ScheduleKind& kind);
std::string describe(const ScheduleKind& kind);

enum class ArchitectureKind { source_only, single_encoder, double_encoder, prl };

std::string to_string(ArchitectureKind kind);
ArchitectureKind parse_architecture(const std::string& text);

struct ScheduleState {
  int epoch = 0;
  bool warm_up_triggered = false;
  /// Running minimum of the reported MMD through each completed epoch.
  std::vector<double> best_mmd_by_epoch;
};

struct TrainFlags {
  bool source_trainable = false;
  bool target_trainable = true;
  friend bool operator==(const TrainFlags&, const TrainFlags&) = default;
};

/// Running-minimum plateau test over an epoch-level MMD history. With e the
/// last index and b the running minimum: fires iff b_e <= eps_small,
/// e >= patience and (b_{e-patience} - b_e) / max(b_{e-patience}, 1e-12)
/// is below min_rel_improve.
bool plateau_detected(std::span<const double> mmd_history, int patience, double min_rel_improve, double eps_small);

/// Flags for epoch state.epoch given the reported MMD of every earlier
/// epoch. `initial_mmd` is the pre-adaptation value used to resolve a
/// relative warm-up gate. Advances state.epoch and latches the warm-up
/// trigger.
TrainFlags schedule_step(const ScheduleKind& kind, ScheduleState& state, std::span<const double> mmd_history,
                         double initial_mmd = 0.0);

}  // namespace prl
