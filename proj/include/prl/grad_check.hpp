// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "prl/nn.hpp"

namespace prl {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
  /// Worst coordinate: "<param>[<flat index>]".
  std::string worst;
  bool pass = false;
};

/// Scalar objective evaluated on a ParamSet. Must be deterministic.
using ParamObjective = std::function<Tensor(const ParamSet&)>;

/// Compares the tape gradient of f against the central difference
/// (f(p+h) - f(p-h)) / 2h for every scalar in params. The error of one
/// coordinate is |analytic - numeric| / max(|analytic|, |numeric|, abs_floor),
/// so coordinates whose gradient is below abs_floor are judged absolutely.
/// `tamper` may rewrite the analytic gradient before comparison; the self
/// test uses it to prove a wrong gradient is caught.
GradCheckReport grad_check(const ParamObjective& f, ParamSet& params, double h, double tol,
                           double abs_floor = 1e-6,
                           const std::function<void(std::vector<double>&)>& tamper = {});

}  // namespace prl
