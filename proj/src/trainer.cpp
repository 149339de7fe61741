// SPDX-License-Identifier: Apache-2.0

#include "prl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>

#include <fmt/format.h>

namespace prl {

void PretrainConfig::validate() const {
  if (epochs < 0) throw Error("pretrain: epochs must be non-negative");
  if (!(lr > 0.0)) throw Error("pretrain: lr must be positive");
  if (weight_decay < 0.0) throw Error("pretrain: weight_decay must be non-negative");
  if (batch_size == 0) throw Error("pretrain: batch_size must be positive");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) throw Error("pretrain: holdout_fraction must be in [0, 1)");
}

std::string to_string(ReferenceStep step) { return step == ReferenceStep::gradient ? "gradient" : "proximal"; }

ReferenceStep parse_reference_step(const std::string& text) {
  if (text == "gradient") return ReferenceStep::gradient;
  if (text == "proximal") return ReferenceStep::proximal;
  throw Error("unknown reference step '" + text + "' (gradient or proximal)");
}

void AdaptConfig::validate() const {
  if (epochs < 1) throw Error("adapt: epochs must be positive");
  if (!(lr > 0.0)) throw Error("adapt: lr must be positive");
  if (weight_decay < 0.0) throw Error("adapt: weight_decay must be non-negative");
  if (batch_size == 0) throw Error("adapt: batch_size must be positive");
  weights.validate();
  mmd.validate();
  prl::validate(schedule);
  if (architecture == ArchitectureKind::double_encoder && weights.reference_weight != 0.0) {
    throw Error(fmt::format("adapt: double_encoder requires reference_weight 0, got {}", weights.reference_weight));
  }
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  const std::size_t n = logits.rows(), k = logits.cols();
  const auto z = logits.data();
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (z[i * k + c] > z[i * k + best]) best = c;
    out[i] = best;
  }
  return out;
}

double accuracy_of(const Tensor& logits, const std::vector<int>& labels) {
  if (labels.empty()) return 0.0;
  const auto pred = argmax_rows(logits);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (static_cast<int>(pred[i]) == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace

double evaluate_accuracy(const Encoder& encoder, const ParamSet& params, const Classifier& classifier,
                         const DomainDataset& ds) {
  if (!ds.labeled()) throw Error("evaluate_accuracy: dataset '" + ds.domain_tag + "' has no labels");
  const Tensor logits = classify(classifier, encoder.encode(params, ds.features));
  return accuracy_of(logits, *ds.labels);
}

TargetEvaluator::TargetEvaluator(DomainDataset labeled_target) : target_(std::move(labeled_target)) {
  if (!target_.labeled()) throw Error("TargetEvaluator: target dataset has no labels");
}

double TargetEvaluator::accuracy(const Encoder& encoder, const ParamSet& params, const Classifier& classifier) const {
  return evaluate_accuracy(encoder, params, classifier, target_);
}

// ---------------------------------------------------------------------------
// Pretraining

PretrainResult pretrain_source(const DomainDataset& source, const EncoderConfig& encoder_cfg,
                               const PretrainConfig& cfg) {
  cfg.validate();
  source.validate();
  if (!source.labeled()) throw Error("pretrain_source: source dataset has no labels");
  if (encoder_cfg.input_dim != source.dim()) {
    throw Error(fmt::format("pretrain_source: encoder input_dim {} but data has {} columns", encoder_cfg.input_dim,
                            source.dim()));
  }
  std::set<int> classes(source.labels->begin(), source.labels->end());
  if (classes.size() < 2) throw Error("pretrain_source: source dataset has a single class");

  auto [encoder, params] = init_encoder(encoder_cfg);
  Classifier classifier(encoder.feature_dim(), source.num_classes, derive_seed(encoder_cfg.init_seed, 7));

  std::vector<std::size_t> order(source.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 split_rng(derive_seed(cfg.seed, 3));
  std::shuffle(order.begin(), order.end(), split_rng);
  const auto n_holdout = static_cast<std::size_t>(std::floor(cfg.holdout_fraction * static_cast<double>(source.size())));
  const std::span<const std::size_t> all(order);
  const DomainDataset holdout = source.subset(all.first(n_holdout));
  const DomainDataset train = source.subset(all.subspan(n_holdout));
  if (train.size() == 0) throw Error("pretrain_source: empty training split");

  std::vector<PretrainEpoch> log;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (const auto& batch : labeled_batches(train, cfg.batch_size, derive_seed(cfg.seed, 100 + epoch))) {
      Tape tape;
      const Tensor loss = classification_loss(classify(classifier, encoder.encode(params, batch.features)),
                                              batch.labels);
      tape.backward(loss);
      sgd_step(params, cfg.lr, cfg.weight_decay);
      sgd_step(classifier.params(), cfg.lr, cfg.weight_decay);
      loss_sum += loss.item();
      ++batches;
    }
    PretrainEpoch rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1));
    rec.train_accuracy = evaluate_accuracy(encoder, params, classifier, train);
    if (holdout.size() > 0) rec.holdout_accuracy = evaluate_accuracy(encoder, params, classifier, holdout);
    log.push_back(rec);
  }
  classifier.freeze();
  return PretrainResult{std::move(encoder), std::move(params), std::move(classifier), std::move(log)};
}

// ---------------------------------------------------------------------------
// Logs and snapshots

std::vector<double> TrainingLog::mmd_history() const {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.mmd_reported);
  return out;
}

bool TrainingLog::has_accuracy() const {
  return !records.empty() &&
         std::all_of(records.begin(), records.end(), [](const auto& r) { return r.target_accuracy.has_value(); });
}

std::vector<double> TrainingLog::accuracies() const {
  std::vector<double> out;
  for (const auto& r : records) {
    if (!r.target_accuracy) throw Error(fmt::format("training log: epoch {} has no target accuracy", r.epoch));
    out.push_back(*r.target_accuracy);
  }
  return out;
}

namespace {
std::string fmt_double(double v) { return fmt::format("{:.17g}", v); }
std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); }
}  // namespace

void write_log_csv(std::ostream& os, const TrainingLog& log) {
  os << "epoch,l_cls,mmd_reported,l_pr,target_acc,source_trainable\n";
  for (const auto& r : log.records) {
    os << r.epoch << ',' << fmt_opt(r.l_cls) << ',' << fmt_double(r.mmd_reported) << ',' << fmt_double(r.l_pr) << ','
       << fmt_opt(r.target_accuracy) << ',' << (r.source_trainable ? 1 : 0) << '\n';
  }
}

void SnapshotStore::put(Snapshot snapshot) {
  if (!snapshots_.empty() && snapshot.epoch <= snapshots_.rbegin()->first) {
    throw Error(fmt::format("snapshot store: epoch {} is not after {}", snapshot.epoch, snapshots_.rbegin()->first));
  }
  const int epoch = snapshot.epoch;
  snapshots_.emplace(epoch, std::move(snapshot));
}

const Snapshot& SnapshotStore::at(int epoch) const {
  const auto it = snapshots_.find(epoch);
  if (it == snapshots_.end()) throw Error(fmt::format("snapshot store: no snapshot for epoch {}", epoch));
  return it->second;
}

const Snapshot& SnapshotStore::latest() const {
  if (snapshots_.empty()) throw Error("snapshot store is empty");
  return snapshots_.rbegin()->second;
}

std::vector<int> SnapshotStore::epochs() const {
  std::vector<int> out;
  for (const auto& [epoch, _] : snapshots_) out.push_back(epoch);
  return out;
}

void SnapshotStore::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  auto dump = [](const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("snapshot store: cannot write " + path.string());
    out << text;
  };
  if (!classifier_.empty()) dump(dir / "classifier.prlparams", classifier_);
  for (const auto& [epoch, snap] : snapshots_) {
    const std::string stem = fmt::format("epoch_{:04d}", epoch);
    dump(dir / (stem + ".target.prlparams"), snap.target_params);
    if (snap.source_params) dump(dir / (stem + ".source.prlparams"), *snap.source_params);
  }
}

// ---------------------------------------------------------------------------
// Adaptation

namespace {

// Full-dataset losses of the current state; no tape is active here.
EpochRecord measure(const Encoder& encoder, const ParamSet& source_params, const ParamSet& target_params,
                    const Classifier& classifier, const DomainDataset& source, const UnlabeledDataset& target,
                    const AdaptConfig& cfg, bool shared, const TargetEvaluator* evaluator) {
  EpochRecord rec;
  const Tensor fs = encoder.encode(source_params, source.features);
  const Tensor ft = encoder.encode(target_params, target.features());
  rec.mmd_reported = reported_mmd(mmd_loss(fs, ft, cfg.mmd).item());
  rec.l_pr = shared ? 0.0 : prl_loss(target_params, source_params, cfg.weights.norm).item();
  rec.l_cls = classification_loss(classify(classifier, fs), *source.labels).item();
  if (evaluator) rec.target_accuracy = evaluator->accuracy(encoder, target_params, classifier);
  return rec;
}

// Weights the differentiated objective sees; under the proximal step the
// reference term is applied afterwards instead.
LossWeights gradient_weights(const AdaptConfig& cfg) {
  LossWeights w = cfg.weights;
  if (cfg.reference_step == ReferenceStep::proximal) w.reference_weight = 0.0;
  return w;
}

void reference_prox(ParamSet& params, const ParamSet& reference, const AdaptConfig& cfg) {
  if (cfg.reference_step == ReferenceStep::proximal)
    prl_proximal_step(params, reference, cfg.lr * cfg.weights.reference_weight, cfg.weights.norm);
}

void target_step(const Encoder& encoder, const ParamSet& source_params, ParamSet& target_params,
                 const BatchPair& batch, const AdaptConfig& cfg) {
  Tape tape;
  const ParamSet reference = source_params.detached();
  const Tensor fs = encoder.encode(reference, batch.source.features);
  const Tensor ft = encoder.encode(target_params, batch.target.features);
  tape.backward(target_objective(fs, ft, target_params, reference, cfg.mmd, gradient_weights(cfg)));
  sgd_step(target_params, cfg.lr, cfg.weight_decay);
  reference_prox(target_params, reference, cfg);
}

void source_step(const Encoder& encoder, ParamSet& source_params, const ParamSet& target_params,
                 const Classifier& classifier, const BatchPair& batch, const AdaptConfig& cfg) {
  Tape tape;
  const ParamSet reference = target_params.detached();
  const Tensor fs = encoder.encode(source_params, batch.source.features);
  const Tensor ft = encoder.encode(reference, batch.target.features);
  const Tensor logits = classify(classifier, fs);
  tape.backward(
      source_objective(logits, batch.source.labels, fs, ft, source_params, reference, cfg.mmd, gradient_weights(cfg)));
  sgd_step(source_params, cfg.lr, cfg.weight_decay);
  reference_prox(source_params, reference, cfg);
}

void shared_step(const Encoder& encoder, ParamSet& shared, const Classifier& classifier, const BatchPair& batch,
                 const AdaptConfig& cfg) {
  Tape tape;
  const Tensor fs = encoder.encode(shared, batch.source.features);
  const Tensor ft = encoder.encode(shared, batch.target.features);
  const Tensor loss = classification_loss(classify(classifier, fs), batch.source.labels) + mmd_loss(fs, ft, cfg.mmd);
  tape.backward(loss);
  sgd_step(shared, cfg.lr, cfg.weight_decay);
}

}  // namespace

AdaptResult adapt(const Encoder& encoder, const ParamSet& source_params, const Classifier& classifier,
                  const DomainDataset& source, const UnlabeledDataset& target, const AdaptConfig& cfg,
                  const TargetEvaluator* evaluator) {
  cfg.validate();
  if (!classifier.frozen()) throw Error("adapt: classifier must be frozen");
  if (!source.labeled()) throw Error("adapt: source dataset has no labels");
  if (source.dim() != encoder.input_dim() || target.dim() != encoder.input_dim()) {
    throw Error(fmt::format("adapt: encoder expects {} features, source has {}, target has {}", encoder.input_dim(),
                            source.dim(), target.dim()));
  }

  const ArchitectureKind arch = cfg.architecture;
  const bool shared = arch == ArchitectureKind::single_encoder;
  const bool baseline = arch != ArchitectureKind::prl;

  AdaptResult result;
  // Both encoders start from the source model. For the single encoder the
  // target stream reads the same parameter set.
  result.source_params = clone_params(source_params);
  if (!shared) result.target_params = clone_params(source_params);
  ParamSet& ps = result.source_params;
  ParamSet& pt = shared ? result.source_params : result.target_params;
  check_aligned(pt, ps);

  const UnpairedBatchSampler sampler(source, target, cfg.batch_size, cfg.batch_size);
  result.snapshots.set_classifier(serialize_params(classifier.params()));

  TrainingLog& log = result.log;
  log.initial = measure(encoder, ps, pt, classifier, source, target, cfg, shared, evaluator);
  log.initial.epoch = -1;
  log.initial.l_cls.reset();

  ScheduleState state;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<double> history = log.mmd_history();
    TrainFlags flags{false, true};
    switch (arch) {
      case ArchitectureKind::source_only: flags = {false, false}; break;
      case ArchitectureKind::single_encoder: flags = {true, true}; break;
      case ArchitectureKind::double_encoder:
        flags = schedule_step(schedule::Naive{}, state, history);
        break;
      case ArchitectureKind::prl:
        flags = schedule_step(cfg.schedule, state, history, log.initial.mmd_reported);
        break;
    }

    if (arch != ArchitectureKind::source_only) {
      for (const BatchPair& batch : sampler.epoch(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)))) {
        if (shared) {
          shared_step(encoder, ps, classifier, batch, cfg);
          continue;
        }
        target_step(encoder, ps, pt, batch, cfg);
        if (flags.source_trainable) source_step(encoder, ps, pt, classifier, batch, cfg);
      }
    }

    EpochRecord rec = measure(encoder, ps, pt, classifier, source, target, cfg, shared, evaluator);
    rec.epoch = epoch;
    rec.source_trainable = flags.source_trainable;
    const bool cls_active = shared || (!baseline && flags.source_trainable);
    if (!cls_active) rec.l_cls.reset();
    log.records.push_back(rec);

    Snapshot snap;
    snap.epoch = epoch;
    snap.target_params = serialize_params(pt);
    if (flags.source_trainable && !shared) snap.source_params = serialize_params(ps);
    snap.target_accuracy = rec.target_accuracy;
    result.snapshots.put(std::move(snap));
  }
  return result;
}

WidthProbe make_width_probe(const Encoder& encoder, const ParamSet& source_params, const Classifier& classifier,
                            const DomainDataset& source, const UnlabeledDataset& target, AdaptConfig base) {
  base.architecture = ArchitectureKind::double_encoder;
  base.weights.reference_weight = 0.0;
  base.schedule = schedule::Naive{};
  return [&encoder, &source_params, &classifier, &source, &target, base](double width, int epochs) {
    AdaptConfig cfg = base;
    cfg.mmd.kernel = KernelKind::gaussian;
    cfg.mmd.width = width;
    cfg.epochs = epochs;
    const AdaptResult run = adapt(encoder, source_params, classifier, source, target, cfg);
    std::vector<double> trajectory{run.log.initial.mmd_reported};
    for (const auto& r : run.log.records) trajectory.push_back(r.mmd_reported);
    return trajectory;
  };
}

}  // namespace prl
