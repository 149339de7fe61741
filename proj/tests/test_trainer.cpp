// SPDX-License-Identifier: Apache-2.0

#include <sstream>

#include <doctest.h>

#include "prl/trainer.hpp"

using namespace prl;

namespace {

std::string log_text(const TrainingLog& log) {
  std::ostringstream os;
  write_log_csv(os, log);
  return os.str();
}

struct Fixture {
  DomainDataset source = make_two_moons(200, 0.1, ShiftSpec{0, {}, 1.0, 0.0, 1});
  DomainDataset target_full = make_two_moons(200, 0.1, ShiftSpec{35, {}, 1.0, 0.0, 2});
  UnlabeledDataset target{target_full};
  TargetEvaluator evaluator{target_full};
  EncoderConfig enc;
  PretrainResult pre;

  Fixture() : pre(pretrain()) {}

  PretrainResult pretrain() {
    enc.hidden_dims = {16, 8};
    PretrainConfig cfg;
    cfg.epochs = 15;
    cfg.lr = 0.05;
    cfg.batch_size = 32;
    return pretrain_source(source, enc, cfg);
  }

  AdaptConfig config(ArchitectureKind arch, double lambda = 0.0) const {
    AdaptConfig cfg;
    cfg.architecture = arch;
    cfg.weights.reference_weight = lambda;
    cfg.mmd = {KernelKind::linear, 1.0};
    cfg.epochs = 6;
    cfg.lr = 0.05;
    cfg.batch_size = 32;
    return cfg;
  }

  AdaptResult run(const AdaptConfig& cfg) const {
    return adapt(pre.encoder, pre.params, pre.classifier, source, target, cfg, &evaluator);
  }
};

std::vector<double> flat(const ParamSet& p) {
  std::vector<double> v;
  for (const auto& e : p) v.insert(v.end(), e.tensor.data().begin(), e.tensor.data().end());
  return v;
}

}  // namespace

TEST_CASE("pretraining separates blobs") {
  // centers_seed 5 puts the two unit-variance clusters about 7.6 apart
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const DomainDataset ds = make_blobs(400, 2, 2, 5, ShiftSpec{0, {}, 1.0, 0.0, seed});
    EncoderConfig enc;
    enc.hidden_dims = {16};
    enc.init_seed = seed;
    PretrainConfig cfg;
    cfg.epochs = 50;
    cfg.lr = 0.05;
    cfg.batch_size = 32;
    cfg.seed = seed;
    const PretrainResult r = pretrain_source(ds, enc, cfg);
    REQUIRE(r.log.size() == 50);
    REQUIRE(r.log.back().holdout_accuracy.has_value());
    CHECK(*r.log.back().holdout_accuracy >= 0.95);
    CHECK(r.classifier.frozen());
  }
}

TEST_CASE("pretraining edge cases") {
  const DomainDataset ds = make_two_moons(40, 0.1, {});
  EncoderConfig enc;
  enc.hidden_dims = {4};
  PretrainConfig cfg;
  cfg.lr = 0.05;

  cfg.epochs = 0;
  const PretrainResult untouched = pretrain_source(ds, enc, cfg);
  CHECK(untouched.log.empty());
  CHECK(flat(untouched.params) == flat(init_encoder(enc).second));

  cfg.epochs = 3;
  CHECK(flat(pretrain_source(ds, enc, cfg).params) == flat(pretrain_source(ds, enc, cfg).params));

  DomainDataset one_class = ds;
  std::fill(one_class.labels->begin(), one_class.labels->end(), 0);
  CHECK_THROWS(pretrain_source(one_class, enc, cfg));
  enc.input_dim = 3;
  CHECK_THROWS(pretrain_source(ds, enc, cfg));
}

TEST_CASE("accuracy tie rule and label complement") {
  const DomainDataset ds = make_two_moons(20, 0.1, {});
  EncoderConfig enc;
  enc.hidden_dims = {3};
  const auto [encoder, params] = init_encoder(enc);
  Classifier zero(3, 2, 0);
  for (auto& e : zero.params()) std::fill(e.tensor.mutable_data().begin(), e.tensor.mutable_data().end(), 0.0);
  // Every row ties; class 0 wins, which is half the balanced labels.
  CHECK(evaluate_accuracy(encoder, params, zero, ds) == 0.5);

  Classifier c(3, 2, 4);
  DomainDataset flipped = ds;
  for (auto& y : *flipped.labels) y = 1 - y;
  const double a = evaluate_accuracy(encoder, params, c, ds);
  CHECK(evaluate_accuracy(encoder, params, c, flipped) == doctest::Approx(1.0 - a).epsilon(1e-15));

  DomainDataset unlabeled = ds;
  unlabeled.labels.reset();
  CHECK_THROWS(evaluate_accuracy(encoder, params, c, unlabeled));
}

TEST_CASE("perfect classifier scores 1") {
  // Features are the inputs themselves; the head reads the label off x0.
  DomainDataset ds;
  ds.features = Tensor::matrix({{1, 0}, {-1, 0}, {2, 5}, {-3, 1}});
  ds.labels = std::vector<int>{1, 0, 1, 0};
  ds.num_classes = 2;
  EncoderConfig enc;
  enc.hidden_dims = {2};
  auto [encoder, params] = init_encoder(enc);
  auto w = params[0].tensor.mutable_data();
  std::vector<double> identity{1, 0, 0, 1};
  std::copy(identity.begin(), identity.end(), w.begin());
  ParamSet head;
  head.add("w", Tensor::matrix({{-1, 1}, {0, 0}}));
  head.add("b", Tensor::matrix({{0, 0}}));
  // relu keeps only the positive part, so negative rows score (0, 0) and tie to class 0.
  CHECK(evaluate_accuracy(encoder, params, Classifier(std::move(head)), ds) == 1.0);
}

TEST_CASE("adaptation reductions") {
  Fixture fx;

  SUBCASE("prl at lambda 0 under the naive schedule is the double encoder") {
    AdaptConfig prl = fx.config(ArchitectureKind::prl, 0.0);
    prl.schedule = schedule::Naive{};
    const AdaptResult a = fx.run(prl);
    const AdaptResult b = fx.run(fx.config(ArchitectureKind::double_encoder));
    CHECK(log_text(a.log) == log_text(b.log));
    CHECK(flat(a.target_params) == flat(b.target_params));
  }
  SUBCASE("single encoder logs no reference loss") {
    const AdaptResult r = fx.run(fx.config(ArchitectureKind::single_encoder));
    for (const auto& rec : r.log.records) {
      CHECK(rec.l_pr == 0.0);
      CHECK(rec.l_cls.has_value());
    }
  }
  SUBCASE("initial state matches the source model") {
    const AdaptResult r = fx.run(fx.config(ArchitectureKind::prl, 0.5));
    CHECK(r.log.initial.epoch == -1);
    CHECK(r.log.initial.l_pr == 0.0);
    REQUIRE(r.log.initial.target_accuracy.has_value());
    CHECK(*r.log.initial.target_accuracy == fx.evaluator.accuracy(fx.pre.encoder, fx.pre.params, fx.pre.classifier));
  }
  SUBCASE("source only never moves") {
    const AdaptResult r = fx.run(fx.config(ArchitectureKind::source_only));
    CHECK(flat(r.target_params) == flat(fx.pre.params));
    for (const auto& rec : r.log.records) CHECK(rec.target_accuracy == r.log.initial.target_accuracy);
  }
}

TEST_CASE("a heavy reference weight pins the target encoder") {
  Fixture fx;
  for (const ReferenceStep step : {ReferenceStep::proximal, ReferenceStep::gradient}) {
    AdaptConfig free_cfg = fx.config(ArchitectureKind::prl, 0.0);
    // The explicit gradient step needs lr * lambda well below 1 to stay stable.
    AdaptConfig pinned = fx.config(ArchitectureKind::prl, step == ReferenceStep::proximal ? 1e6 : 5.0);
    free_cfg.reference_step = pinned.reference_step = step;
    free_cfg.weights.norm = pinned.weights.norm = step == ReferenceStep::proximal ? NormKind::l1 : NormKind::l2;
    const double l_free = fx.run(free_cfg).log.records.back().l_pr;
    const double l_pinned = fx.run(pinned).log.records.back().l_pr;
    CHECK(l_free > 0.0);
    CHECK(l_pinned < l_free);
  }
}

TEST_CASE("adaptation bookkeeping") {
  Fixture fx;
  AdaptConfig cfg = fx.config(ArchitectureKind::prl, 0.1);
  cfg.schedule = schedule::InTurn{1};
  const std::vector<double> classifier_before = flat(fx.pre.classifier.params());
  const AdaptResult r = fx.run(cfg);

  CHECK(flat(fx.pre.classifier.params()) == classifier_before);
  REQUIRE(r.log.records.size() == 6);
  CHECK(r.snapshots.size() == 6);
  CHECK(r.snapshots.epochs() == std::vector<int>{0, 1, 2, 3, 4, 5});
  for (const auto& rec : r.log.records) {
    CHECK(rec.source_trainable == (rec.epoch % 2 == 1));
    CHECK(rec.l_cls.has_value() == rec.source_trainable);
  }
  CHECK(r.snapshots.at(1).source_params.has_value());
  CHECK_FALSE(r.snapshots.at(0).source_params.has_value());

  // Reloading a snapshot reproduces the accuracy logged for it.
  const Classifier head(deserialize_params(r.snapshots.classifier()));
  for (int e : {0, 3, 5}) {
    const ParamSet p = deserialize_params(r.snapshots.at(e).target_params);
    CHECK(fx.evaluator.accuracy(fx.pre.encoder, p, head) == *r.log.records[e].target_accuracy);
  }
  CHECK(flat(deserialize_params(r.snapshots.latest().target_params)) == flat(r.target_params));

  // Same inputs, same bytes.
  CHECK(log_text(fx.run(cfg).log) == log_text(r.log));
}

TEST_CASE("adaptation without an evaluator logs no accuracy") {
  Fixture fx;
  const AdaptResult r =
      adapt(fx.pre.encoder, fx.pre.params, fx.pre.classifier, fx.source, fx.target, fx.config(ArchitectureKind::prl));
  CHECK_FALSE(r.log.has_accuracy());
  CHECK(log_text(r.log).find(",,0\n") != std::string::npos);
}

TEST_CASE("adaptation contract") {
  Fixture fx;
  CHECK_THROWS(fx.run(fx.config(ArchitectureKind::double_encoder, 1.0)));
  AdaptConfig zero_epochs = fx.config(ArchitectureKind::prl);
  zero_epochs.epochs = 0;
  CHECK_THROWS(fx.run(zero_epochs));
  Classifier loose(fx.pre.encoder.feature_dim(), 2, 0);
  CHECK_THROWS(adapt(fx.pre.encoder, fx.pre.params, loose, fx.source, fx.target, fx.config(ArchitectureKind::prl)));
  CHECK(parse_reference_step(to_string(ReferenceStep::gradient)) == ReferenceStep::gradient);
  CHECK_THROWS(parse_reference_step("implicit"));
}

TEST_CASE("snapshot store ordering") {
  SnapshotStore s;
  s.put({0, "a", std::nullopt, 0.5});
  s.put({2, "b", std::nullopt, 0.6});
  CHECK_THROWS(s.put({1, "c", std::nullopt, 0.7}));
  CHECK(s.latest().epoch == 2);
  CHECK_THROWS(s.at(1));
}
