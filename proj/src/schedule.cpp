// SPDX-License-Identifier: Apache-2.0

#include "prl/schedule.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "prl/tensor.hpp"

namespace prl {

namespace {
template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;
}  // namespace

void validate(const ScheduleKind& kind) {
  std::visit(overloaded{
                 [](const schedule::Naive&) {},
                 [](const schedule::Simultaneous&) {},
                 [](const schedule::Warmup& w) {
                   if (w.patience < 1) throw Error("warmup: patience must be >= 1");
                   if (!(w.min_rel_improve > 0.0 && w.min_rel_improve < 1.0)) {
                     throw Error("warmup: min_rel_improve must lie in (0, 1)");
                   }
                   if (w.eps_small && !(*w.eps_small > 0.0)) throw Error("warmup: eps_small must be positive");
                   if (!(w.eps_small_fraction > 0.0)) throw Error("warmup: eps_small_fraction must be positive");
                 },
                 [](const schedule::InTurn& t) {
                   if (t.k < 1) throw Error("inturn: k must be >= 1");
                 },
             },
             kind);
}

std::string describe(const ScheduleKind& kind) {
  return std::visit(overloaded{
                        [](const schedule::Naive&) { return std::string("naive"); },
                        [](const schedule::Simultaneous&) { return std::string("simultaneous"); },
                        [](const schedule::Warmup& w) {
                          return fmt::format("warmup(patience={},min_rel_improve={},eps_small={})", w.patience,
                                             w.min_rel_improve,
                                             w.eps_small ? fmt::format("{}", *w.eps_small)
                                                         : fmt::format("{}*initial", w.eps_small_fraction));
                        },
                        [](const schedule::InTurn& t) { return fmt::format("inturn(k={})", t.k); },
                    },
                    kind);
}

std::string to_string(ArchitectureKind kind) {
  switch (kind) {
    case ArchitectureKind::source_only: return "source_only";
    case ArchitectureKind::single_encoder: return "single_encoder";
    case ArchitectureKind::double_encoder: return "double_encoder";
    case ArchitectureKind::prl: return "prl";
  }
  return "unknown";
}

ArchitectureKind parse_architecture(const std::string& text) {
  for (auto k : {ArchitectureKind::source_only, ArchitectureKind::single_encoder, ArchitectureKind::double_encoder,
                 ArchitectureKind::prl}) {
    if (to_string(k) == text) return k;
  }
  throw Error("unknown architecture '" + text + "'");
}

bool plateau_detected(std::span<const double> mmd_history, int patience, double min_rel_improve, double eps_small) {
  if (mmd_history.empty() || patience < 1) return false;
  const std::size_t e = mmd_history.size() - 1;
  if (e < static_cast<std::size_t>(patience)) return false;
  std::vector<double> running(mmd_history.size());
  double best = mmd_history[0];
  for (std::size_t i = 0; i < mmd_history.size(); ++i) {
    best = std::min(best, mmd_history[i]);
    running[i] = best;
  }
  const double now = running[e];
  const double then = running[e - static_cast<std::size_t>(patience)];
  if (now > eps_small) return false;
  return (then - now) / std::max(then, 1e-12) < min_rel_improve;
}

TrainFlags schedule_step(const ScheduleKind& kind, ScheduleState& state, std::span<const double> mmd_history,
                         double initial_mmd) {
  state.best_mmd_by_epoch.clear();
  double best = 0.0;
  for (std::size_t i = 0; i < mmd_history.size(); ++i) {
    best = i == 0 ? mmd_history[0] : std::min(best, mmd_history[i]);
    state.best_mmd_by_epoch.push_back(best);
  }

  const int epoch = state.epoch++;
  const TrainFlags flags = std::visit(
      overloaded{
          [](const schedule::Naive&) { return TrainFlags{false, true}; },
          [](const schedule::Simultaneous&) { return TrainFlags{true, true}; },
          [&](const schedule::Warmup& w) {
            if (!state.warm_up_triggered) {
              const double eps = w.eps_small ? *w.eps_small : w.eps_small_fraction * initial_mmd;
              if (plateau_detected(mmd_history, w.patience, w.min_rel_improve, eps)) state.warm_up_triggered = true;
            }
            return TrainFlags{state.warm_up_triggered, true};
          },
          [&](const schedule::InTurn& t) { return TrainFlags{(epoch / t.k) % 2 == 1, true}; },
      },
      kind);
  return flags;
}

}  // namespace prl
