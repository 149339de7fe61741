// SPDX-License-Identifier: Apache-2.0
//
// Classification, MMD and parameter-reference losses and the two
// adaptation objectives built from them.

#pragma once

#include <functional>
#include <span>
#include <vector>

#include "prl/nn.hpp"

namespace prl {

enum class KernelKind { gaussian, linear };
enum class NormKind { l1, l2 };

struct MMDConfig {
  KernelKind kernel = KernelKind::gaussian;
  /// Gaussian kernel k(x, y) = exp(-|x - y|^2 / width).
  double width = 50000.0;

  void validate() const;
};

struct LossWeights {
  double reference_weight = 10.0;
  NormKind norm = NormKind::l1;

  void validate() const;
};

/// Mean cross-entropy of softmax(logits) against integer labels.
Tensor classification_loss(const Tensor& logits, std::span<const int> labels);

/// Biased V-statistic of the squared MMD between two feature batches,
/// clamped at 0 from below.
Tensor mmd_loss(const Tensor& source_features, const Tensor& target_features, const MMDConfig& cfg);

/// The value logs and thresholds refer to: sqrt of the squared MMD.
double reported_mmd(double mmd_squared);

/// Sum over aligned scalars of |t - s| (L1) or (t - s)^2 (L2). Gradients
/// reach whichever side requires grad; pass a detached set for the
/// reference side.
Tensor prl_loss(const ParamSet& target, const ParamSet& source, NormKind norm);

/// Proximal map of step * L_PR around `reference`, applied to `params` in
/// place: soft thresholding of each difference by step (L1) or shrinking
/// it by 1 / (1 + 2 step) (L2). A no-op when step is 0.
void prl_proximal_step(ParamSet& params, const ParamSet& reference, double step, NormKind norm);

/// L_MMD + lambda * L_PR, minimized by the target encoder.
Tensor target_objective(const Tensor& source_features, const Tensor& target_features, const ParamSet& target_params,
                        const ParamSet& source_params, const MMDConfig& mmd, const LossWeights& weights);

/// L_CLS + L_MMD + lambda * L_PR, minimized by the source encoder when
/// the schedule lets it learn.
Tensor source_objective(const Tensor& logits, std::span<const int> labels, const Tensor& source_features,
                        const Tensor& target_features, const ParamSet& source_params, const ParamSet& target_params,
                        const MMDConfig& mmd, const LossWeights& weights);

/// Runs a short lambda = 0 adaptation for one kernel width and returns the
/// reported MMD trajectory: the pre-adaptation value followed by one value
/// per epoch.
using WidthProbe = std::function<std::vector<double>(double width, int epochs)>;

/// Relative slack allowed between consecutive epochs of a "decreasing" trajectory.
inline constexpr double kWidthSelectionSlack = 0.01;

/// True when every step satisfies next <= prev * (1 + slack) and the last
/// value is below the first.
bool trajectory_decreasing(std::span<const double> trajectory, double slack = kWidthSelectionSlack);

/// Smallest candidate width whose probe trajectory keeps decreasing.
/// Never looks at target labels: the probe only reports MMD.
double select_kernel_width(std::vector<double> candidates, const WidthProbe& probe, int epochs);

}  // namespace prl
