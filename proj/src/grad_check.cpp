// SPDX-License-Identifier: Apache-2.0

#include "prl/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace prl {

namespace {

double evaluate(const ParamObjective& f, const ParamSet& params) {
  const double v = f(params).item();
  if (!std::isfinite(v)) throw Error("grad_check: objective returned a non-finite value");
  return v;
}

}  // namespace

GradCheckReport grad_check(const ParamObjective& f, ParamSet& params, double h, double tol, double abs_floor,
                           const std::function<void(std::vector<double>&)>& tamper) {
  if (!(h > 0.0 && h <= 1e-2)) throw Error("grad_check: step h must lie in (0, 1e-2]");

  params.zero_grad();
  std::vector<double> analytic;
  {
    Tape tape;
    const Tensor out = f(params);
    if (!std::isfinite(out.item())) throw Error("grad_check: objective returned a non-finite value");
    tape.backward(out);
  }
  for (const auto& e : params) {
    if (e.tensor.has_grad()) {
      const auto g = e.tensor.grad();
      analytic.insert(analytic.end(), g.begin(), g.end());
    } else {
      analytic.insert(analytic.end(), e.tensor.size(), 0.0);
    }
  }
  params.zero_grad();
  if (tamper) tamper(analytic);

  GradCheckReport report;
  double total = 0.0;
  std::size_t count = 0;
  std::size_t flat = 0;
  for (auto& e : params) {
    GradCheckEntry entry{e.name};
    auto p = e.tensor.mutable_data();
    double entry_total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i, ++flat) {
      const double orig = p[i];
      p[i] = orig + h;
      const double up = evaluate(f, params);
      p[i] = orig - h;
      const double down = evaluate(f, params);
      p[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[flat];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), abs_floor});
      const double rel = std::fabs(a - numeric) / denom;
      entry.max_rel_error = std::max(entry.max_rel_error, rel);
      entry_total += rel;
      if (rel > report.max_rel_error || count == 0) {
        report.worst = e.name + "[" + std::to_string(i) + "]";
      }
      report.max_rel_error = std::max(report.max_rel_error, rel);
      total += rel;
      ++count;
    }
    entry.mean_rel_error = p.empty() ? 0.0 : entry_total / static_cast<double>(p.size());
    report.entries.push_back(std::move(entry));
  }
  report.mean_rel_error = count ? total / static_cast<double>(count) : 0.0;
  report.pass = report.max_rel_error <= tol;
  return report;
}

}  // namespace prl
