// SPDX-License-Identifier: Apache-2.0
//
// Source pretraining and the two-stream adaptation phase.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "prl/data.hpp"
#include "prl/losses.hpp"
#include "prl/nn.hpp"
#include "prl/schedule.hpp"

namespace prl {

struct PretrainConfig {
  int epochs = 50;
  double lr = 1e-4;
  double weight_decay = 2e-5;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  /// Fraction of the source set held out for the accuracy log.
  double holdout_fraction = 0.2;

  void validate() const;
};

/// How the lambda * L_PR term enters an adaptation update.
enum class ReferenceStep {
  /// Plain gradient of the whole objective.
  gradient,
  /// Gradient step on the other terms, then the proximal map of
  /// lr * lambda * L_PR. Stays stable when lr * lambda is large.
  proximal,
};

std::string to_string(ReferenceStep step);
ReferenceStep parse_reference_step(const std::string& text);

struct AdaptConfig {
  ArchitectureKind architecture = ArchitectureKind::prl;
  ScheduleKind schedule = schedule::Naive{};
  LossWeights weights;
  MMDConfig mmd;
  int epochs = 50;
  double lr = 1e-4;
  double weight_decay = 2e-5;
  /// Per-domain batch size.
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  ReferenceStep reference_step = ReferenceStep::proximal;

  void validate() const;
};

struct PretrainEpoch {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> holdout_accuracy;
};

struct PretrainResult {
  Encoder encoder;
  ParamSet params;
  /// Frozen on return: adaptation never updates the classifier.
  Classifier classifier;
  std::vector<PretrainEpoch> log;
};

/// Minimizes the classification loss on the labeled source domain.
PretrainResult pretrain_source(const DomainDataset& source, const EncoderConfig& encoder_cfg,
                               const PretrainConfig& cfg);

/// Fraction of rows whose argmax logit (lowest index on ties) matches the label.
double evaluate_accuracy(const Encoder& encoder, const ParamSet& params, const Classifier& classifier,
                         const DomainDataset& ds);

/// Owns target labels for analysis logging. Adaptation code only ever sees
/// the accuracy it returns, never the labels themselves.
class TargetEvaluator {
 public:
  explicit TargetEvaluator(DomainDataset labeled_target);
  double accuracy(const Encoder& encoder, const ParamSet& params, const Classifier& classifier) const;

 private:
  DomainDataset target_;
};

struct EpochRecord {
  int epoch = 0;
  std::optional<double> l_cls;
  double mmd_reported = 0.0;
  double l_pr = 0.0;
  std::optional<double> target_accuracy;
  bool source_trainable = false;
};

struct TrainingLog {
  /// State before the first update (epoch = -1); not a CSV row.
  EpochRecord initial;
  std::vector<EpochRecord> records;

  std::vector<double> mmd_history() const;
  bool has_accuracy() const;
  std::vector<double> accuracies() const;
};

/// Columns: epoch,l_cls,mmd_reported,l_pr,target_acc,source_trainable.
void write_log_csv(std::ostream& os, const TrainingLog& log);

struct Snapshot {
  int epoch = 0;
  std::string target_params;
  std::optional<std::string> source_params;
  std::optional<double> target_accuracy;
};

/// Serialized per-epoch encoder states plus the shared frozen classifier.
class SnapshotStore {
 public:
  void set_classifier(std::string serialized) { classifier_ = std::move(serialized); }
  const std::string& classifier() const noexcept { return classifier_; }

  void put(Snapshot snapshot);
  std::size_t size() const noexcept { return snapshots_.size(); }
  bool empty() const noexcept { return snapshots_.empty(); }
  const Snapshot& at(int epoch) const;
  const Snapshot& latest() const;
  std::vector<int> epochs() const;

  /// epoch_NNNN.target.prlparams (+ .source.prlparams) and classifier.prlparams.
  void write(const std::filesystem::path& dir) const;

 private:
  std::map<int, Snapshot> snapshots_;
  std::string classifier_;
};

struct AdaptResult {
  TrainingLog log;
  SnapshotStore snapshots;
  ParamSet target_params;
  ParamSet source_params;
};

/// Adapts a copy of the source encoder to the unlabeled target domain. The
/// classifier must be frozen. Target accuracy is logged only when an
/// evaluator is supplied; it never feeds back into training.
AdaptResult adapt(const Encoder& encoder, const ParamSet& source_params, const Classifier& classifier,
                  const DomainDataset& source, const UnlabeledDataset& target, const AdaptConfig& cfg,
                  const TargetEvaluator* evaluator = nullptr);

/// Probe for select_kernel_width: a lambda = 0 double-encoder run whose
/// trajectory is the initial reported MMD followed by each epoch's value.
/// The referenced objects must outlive the probe.
WidthProbe make_width_probe(const Encoder& encoder, const ParamSet& source_params, const Classifier& classifier,
                            const DomainDataset& source, const UnlabeledDataset& target, AdaptConfig base);

}  // namespace prl
