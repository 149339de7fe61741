// SPDX-License-Identifier: Apache-2.0
//
// Fast invariant suite run by `prl selftest`.

#pragma once

#include <string>
#include <vector>

namespace prl {

struct SelftestResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct SelftestOptions {
  /// Random draws per gradient and oracle check.
  int seeds = 10;
  /// Negates the analytic gradient of the L1 reference loss, so the suite
  /// can show it notices a sign error.
  bool flip_l1_gradient = false;
  bool stop_at_first_failure = true;
};

std::vector<SelftestResult> run_selftest(const SelftestOptions& opts = {});

}  // namespace prl
