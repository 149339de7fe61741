// SPDX-License-Identifier: Apache-2.0

#include "prl/losses.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace prl {

void MMDConfig::validate() const {
  if (kernel == KernelKind::gaussian && !(width > 0.0 && std::isfinite(width))) {
    throw Error(fmt::format("mmd: gaussian kernel width must be positive, got {}", width));
  }
}

void LossWeights::validate() const {
  if (!(reference_weight >= 0.0 && std::isfinite(reference_weight))) {
    throw Error(fmt::format("loss weights: reference_weight must be >= 0, got {}", reference_weight));
  }
}

Tensor classification_loss(const Tensor& logits, std::span<const int> labels) {
  return softmax_cross_entropy(logits, labels);
}

namespace {

Tensor gaussian_kernel_mean(const Tensor& a, const Tensor& b, double width) {
  return reduce_mean(exp(scale(pairwise_sq_dists(a, b), -1.0 / width)));
}

// 1 x d row of column means.
Tensor column_mean(const Tensor& x) {
  const std::size_t n = x.rows();
  const Tensor ones({1, n}, std::vector<double>(n, 1.0 / static_cast<double>(n)));
  return matmul(ones, x);
}

}  // namespace

Tensor mmd_loss(const Tensor& source_features, const Tensor& target_features, const MMDConfig& cfg) {
  cfg.validate();
  if (source_features.shape().size() != 2 || target_features.shape().size() != 2 ||
      source_features.cols() != target_features.cols()) {
    throw ShapeError(OpKind::pairwise_sq_dists, {source_features.shape(), target_features.shape()},
                     "mmd feature batches");
  }
  if (source_features.rows() == 0 || target_features.rows() == 0) {
    throw Error("mmd_loss: empty feature batch");
  }
  if (cfg.kernel == KernelKind::linear) {
    // With the identity feature map the mean embeddings are the column means.
    return reduce_sum(square(column_mean(source_features) - column_mean(target_features)));
  }
  const Tensor ss = gaussian_kernel_mean(source_features, source_features, cfg.width);
  const Tensor tt = gaussian_kernel_mean(target_features, target_features, cfg.width);
  const Tensor st = gaussian_kernel_mean(source_features, target_features, cfg.width);
  return relu(ss + tt - scale(st, 2.0));
}

double reported_mmd(double mmd_squared) { return std::sqrt(std::max(mmd_squared, 0.0)); }

Tensor prl_loss(const ParamSet& target, const ParamSet& source, NormKind norm) {
  check_aligned(target, source);
  Tensor total;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const Tensor diff = target[i].tensor - source[i].tensor;
    const Tensor term = reduce_sum(norm == NormKind::l1 ? abs(diff) : square(diff));
    total = total.defined() ? total + term : term;
  }
  return total.defined() ? total : Tensor::scalar(0.0);
}

void prl_proximal_step(ParamSet& params, const ParamSet& reference, double step, NormKind norm) {
  check_aligned(params, reference);
  if (!(step >= 0.0)) throw Error("prl_proximal_step: step must be non-negative");
  if (step == 0.0) return;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].tensor.mutable_data();
    const auto r = reference[i].tensor.data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double d = p[j] - r[j];
      if (norm == NormKind::l1) {
        p[j] = std::fabs(d) <= step ? r[j] : p[j] - std::copysign(step, d);
      } else {
        p[j] = r[j] + d / (1.0 + 2.0 * step);
      }
    }
  }
}

Tensor target_objective(const Tensor& source_features, const Tensor& target_features, const ParamSet& target_params,
                        const ParamSet& source_params, const MMDConfig& mmd, const LossWeights& weights) {
  weights.validate();
  const Tensor l_mmd = mmd_loss(source_features, target_features, mmd);
  const Tensor l_pr = prl_loss(target_params, source_params, weights.norm);
  return l_mmd + scale(l_pr, weights.reference_weight);
}

Tensor source_objective(const Tensor& logits, std::span<const int> labels, const Tensor& source_features,
                        const Tensor& target_features, const ParamSet& source_params, const ParamSet& target_params,
                        const MMDConfig& mmd, const LossWeights& weights) {
  weights.validate();
  const Tensor l_cls = classification_loss(logits, labels);
  const Tensor l_mmd = mmd_loss(source_features, target_features, mmd);
  const Tensor l_pr = prl_loss(source_params, target_params, weights.norm);
  return l_cls + l_mmd + scale(l_pr, weights.reference_weight);
}

bool trajectory_decreasing(std::span<const double> trajectory, double slack) {
  if (trajectory.size() < 2) return false;
  for (std::size_t i = 1; i < trajectory.size(); ++i) {
    if (!std::isfinite(trajectory[i])) return false;
    if (trajectory[i] > trajectory[i - 1] * (1.0 + slack)) return false;
  }
  return trajectory.back() < trajectory.front();
}

double select_kernel_width(std::vector<double> candidates, const WidthProbe& probe, int epochs) {
  if (candidates.empty()) throw Error("select_kernel_width: candidate list is empty");
  if (epochs < 1) throw Error("select_kernel_width: probe needs at least one epoch");
  for (double c : candidates)
    if (!(c > 0.0 && std::isfinite(c))) throw Error(fmt::format("select_kernel_width: invalid candidate {}", c));
  std::sort(candidates.begin(), candidates.end());
  for (double width : candidates) {
    const auto trajectory = probe(width, epochs);
    if (trajectory_decreasing(trajectory)) return width;
  }
  throw Error(fmt::format("select_kernel_width: no candidate in [{}, {}] gives a decreasing MMD; widen the grid",
                          candidates.front(), candidates.back()));
}

}  // namespace prl
