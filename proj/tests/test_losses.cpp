// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include <doctest.h>

#include "prl/data.hpp"
#include "prl/losses.hpp"
#include "prl/trainer.hpp"

using namespace prl;

namespace {

Tensor random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(r * c);
  for (auto& x : v) x = n(rng);
  return Tensor::matrix(r, c, std::move(v));
}

ParamSet vector_params(std::vector<double> v) {
  ParamSet p;
  const Shape shape{v.size()};
  p.add("w", Tensor(shape, std::move(v), true));
  return p;
}

}  // namespace

TEST_CASE("classification loss closed forms") {
  const std::vector<int> zero{0};
  CHECK(classification_loss(Tensor::matrix({{2, 2, 2}}), std::vector<int>{1}).item() ==
        doctest::Approx(std::log(3.0)).epsilon(1e-14));
  CHECK(classification_loss(Tensor::matrix({{10, 0, 0}}), zero).item() ==
        doctest::Approx(9.0799e-5).epsilon(1e-4));
  CHECK(classification_loss(Tensor::matrix({{10, 0, 0}}), zero).item() ==
        doctest::Approx(std::log1p(2.0 * std::exp(-10.0))).epsilon(1e-12));
  CHECK(classification_loss(Tensor::matrix({{0, 10}}), zero).item() == doctest::Approx(10.0000454).epsilon(1e-8));
  // Adding a constant to every logit of a row changes nothing.
  CHECK(classification_loss(Tensor::matrix({{1000, 1010}}), zero).item() ==
        doctest::Approx(classification_loss(Tensor::matrix({{0, 10}}), zero).item()).epsilon(1e-12));
}

TEST_CASE("classification loss contract") {
  CHECK_THROWS(classification_loss(Tensor::matrix({{0, 1}}), std::vector<int>{2}));
  CHECK_THROWS(classification_loss(Tensor::matrix({{0, 1}}), std::vector<int>{-1}));
  CHECK_THROWS(classification_loss(Tensor::matrix(0, 2, {}), std::vector<int>{}));
  CHECK_THROWS(classification_loss(Tensor::matrix({{0, 1}}), std::vector<int>{0, 1}));
}

TEST_CASE("mmd of identical batches is zero") {
  std::mt19937_64 rng(3);
  const Tensor f = random_matrix(rng, 7, 3);
  CHECK(std::fabs(mmd_loss(f, f, {KernelKind::gaussian, 2.0}).item()) <= 1e-12);
  CHECK(std::fabs(mmd_loss(f, f, {KernelKind::linear, 1.0}).item()) <= 1e-12);
}

TEST_CASE("gaussian mmd of two singletons") {
  const double width = 4.0;
  // |s - t|^2 = 4 = width
  const double got = mmd_loss(Tensor::matrix({{0, 0}}), Tensor::matrix({{2, 0}}), {KernelKind::gaussian, width}).item();
  CHECK(got == doctest::Approx(2.0 - 2.0 * std::exp(-1.0)).epsilon(1e-14));
  CHECK(got == doctest::Approx(1.264241).epsilon(1e-6));
}

TEST_CASE("linear mmd is the squared mean difference") {
  const Tensor s = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor t = Tensor::matrix({{0, 0}, {1, 1}, {2, -1}});
  // means (2, 3) and (1, 0)
  CHECK(mmd_loss(s, t, {KernelKind::linear, 1.0}).item() == doctest::Approx(10.0).epsilon(1e-14));
}

TEST_CASE("mmd is symmetric") {
  std::mt19937_64 rng(9);
  const Tensor s = random_matrix(rng, 5, 2);
  const Tensor t = random_matrix(rng, 8, 2);
  for (const KernelKind k : {KernelKind::gaussian, KernelKind::linear}) {
    const MMDConfig cfg{k, 1.5};
    CHECK(mmd_loss(s, t, cfg).item() == doctest::Approx(mmd_loss(t, s, cfg).item()).epsilon(1e-13));
  }
}

TEST_CASE("mmd contract") {
  const Tensor one = Tensor::matrix({{1, 2}});
  CHECK_THROWS(mmd_loss(Tensor::matrix(0, 2, {}), one, {}));
  CHECK_THROWS(mmd_loss(one, one, {KernelKind::gaussian, 0.0}));
  CHECK_THROWS(mmd_loss(one, one, {KernelKind::gaussian, -1.0}));
  CHECK_THROWS(mmd_loss(one, Tensor::matrix({{1, 2, 3}}), {}));
  CHECK(reported_mmd(0.25) == 0.5);
}

TEST_CASE("reference loss norms") {
  const ParamSet t = vector_params({1, -2, 0.5});
  const ParamSet s = vector_params({0, 0, 0.5});
  CHECK(prl_loss(t, s, NormKind::l1).item() == 3.0);
  CHECK(prl_loss(t, s, NormKind::l2).item() == 5.0);
  CHECK(prl_loss(t, s, NormKind::l1).item() == prl_loss(s, t, NormKind::l1).item());
  CHECK(prl_loss(t, t, NormKind::l1).item() == 0.0);
  CHECK(prl_loss(clone_params(t), t, NormKind::l2).item() == 0.0);

  // Halving the difference halves L1 and quarters L2.
  const ParamSet half = vector_params({0.5, -1, 0.5});
  CHECK(prl_loss(half, s, NormKind::l1).item() == 1.5);
  CHECK(prl_loss(half, s, NormKind::l2).item() == 1.25);
}

TEST_CASE("reference loss rejects misaligned sets") {
  ParamSet a = vector_params({1, 2});
  ParamSet b = vector_params({1, 2, 3});
  CHECK_THROWS_AS(prl_loss(a, b, NormKind::l1), AlignmentError);
}

TEST_CASE("target objective composition") {
  std::mt19937_64 rng(4);
  const Tensor fs = random_matrix(rng, 4, 2);
  const Tensor ft = random_matrix(rng, 6, 2);
  const MMDConfig mmd{KernelKind::gaussian, 2.0};
  const ParamSet pt = vector_params({1, 2});
  const ParamSet ps = vector_params({1.5, 2});
  const double m = mmd_loss(fs, ft, mmd).item();
  CHECK(target_objective(fs, ft, pt, ps, mmd, {0.0, NormKind::l1}).item() == m);
  CHECK(target_objective(fs, ft, pt, pt, mmd, {10.0, NormKind::l1}).item() == m);

  // components 0.3 (linear mmd of singletons) and 0.2 (L1 distance)
  const Tensor s1 = Tensor::matrix({{std::sqrt(0.3)}});
  const Tensor t1 = Tensor::matrix({{0.0}});
  const double v = target_objective(s1, t1, vector_params({0.2}), vector_params({0.0}), {KernelKind::linear, 1.0},
                                    {10.0, NormKind::l1})
                       .item();
  CHECK(v == doctest::Approx(2.3).epsilon(1e-14));
}

TEST_CASE("source objective composition") {
  const std::vector<int> labels{0};
  const Tensor f = Tensor::matrix({{0.5, -1}});
  const Tensor logits = Tensor::matrix({{0.2, 1.3}});
  const ParamSet p = vector_params({1});
  CHECK(source_objective(logits, labels, f, f, p, vector_params({4}), {}, {0.0, NormKind::l1}).item() ==
        doctest::Approx(classification_loss(logits, labels).item()).epsilon(1e-15));

  // components 1.0 (cross-entropy), 0.5 (linear mmd), 0.2 (L1)
  const Tensor unit_ce = Tensor::matrix({{0.0, std::log(std::exp(1.0) - 1.0)}});
  const double v = source_objective(unit_ce, labels, Tensor::matrix({{std::sqrt(0.5)}}), Tensor::matrix({{0.0}}),
                                    vector_params({0.2}), vector_params({0.0}), {KernelKind::linear, 1.0},
                                    {1.0, NormKind::l1})
                       .item();
  CHECK(v == doctest::Approx(1.7).epsilon(1e-14));
}

TEST_CASE("loss config validation") {
  CHECK_THROWS(LossWeights{-1.0, NormKind::l1}.validate());
  CHECK_THROWS(MMDConfig{KernelKind::gaussian, 0.0}.validate());
  CHECK_NOTHROW(LossWeights{}.validate());
}

TEST_CASE("decreasing trajectory rule") {
  CHECK(trajectory_decreasing(std::vector<double>{1.0, 0.8, 0.805, 0.5}));
  CHECK_FALSE(trajectory_decreasing(std::vector<double>{1.0, 0.8, 0.9, 0.5}));
  CHECK_FALSE(trajectory_decreasing(std::vector<double>{1.0, 1.0, 1.0}));
  CHECK_FALSE(trajectory_decreasing(std::vector<double>{1.0}));
}

TEST_CASE("kernel width selection with scripted probes") {
  const WidthProbe probe = [](double width, int epochs) {
    std::vector<double> t{1.0};
    for (int e = 0; e < epochs; ++e) t.push_back(width < 1.0 ? 2.0 * t.back() : 0.9 * t.back());
    return t;
  };
  CHECK(select_kernel_width({5.0}, probe, 3) == 5.0);
  CHECK(select_kernel_width({100.0, 0.5, 10.0, 2.0}, probe, 3) == 2.0);
  CHECK_THROWS(select_kernel_width({}, probe, 3));
  try {
    (void)select_kernel_width({0.1, 0.2}, probe, 3);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("widen") != std::string::npos);
  }
}

TEST_CASE("kernel width selection on a two-moons probe") {
  const DomainDataset source = make_two_moons(200, 0.1, ShiftSpec{0, {}, 1.0, 0.0, 1});
  ShiftSpec rot{35, {}, 1.0, 0.0, 2};
  const DomainDataset target_full = make_two_moons(200, 0.1, rot);
  const UnlabeledDataset target(target_full);
  EncoderConfig enc;
  enc.hidden_dims = {16};
  PretrainConfig pre;
  pre.epochs = 20;
  pre.lr = 0.05;
  pre.batch_size = 32;
  const PretrainResult pr = pretrain_source(source, enc, pre);
  AdaptConfig base;
  base.lr = 0.05;
  base.batch_size = 32;
  const WidthProbe probe = make_width_probe(pr.encoder, pr.params, pr.classifier, source, target, base);
  CHECK_FALSE(trajectory_decreasing(probe(1e-6, 5)));
  CHECK(trajectory_decreasing(probe(1.0, 5)));
  CHECK(select_kernel_width({1e-6, 1.0}, probe, 5) == 1.0);
}

TEST_CASE("proximal reference step") {
  const ParamSet ref = vector_params({0, 0, 0.5});
  SUBCASE("l1 soft threshold") {
    ParamSet p = vector_params({1, -2, 0.6});
    prl_proximal_step(p, ref, 0.25, NormKind::l1);
    const auto d = p[0].tensor.data();
    CHECK(d[0] == 0.75);
    CHECK(d[1] == -1.75);
    CHECK(d[2] == 0.5);
  }
  SUBCASE("l2 shrink") {
    ParamSet p = vector_params({1, -2, 0.5});
    prl_proximal_step(p, ref, 0.5, NormKind::l2);
    const auto d = p[0].tensor.data();
    CHECK(d[0] == 0.5);
    CHECK(d[1] == -1.0);
    CHECK(d[2] == 0.5);
  }
  SUBCASE("huge step lands on the reference") {
    ParamSet p = vector_params({1, -2, 3});
    prl_proximal_step(p, ref, 1e6, NormKind::l1);
    CHECK(prl_loss(p, ref, NormKind::l1).item() == 0.0);
  }
  SUBCASE("zero step leaves the bits alone") {
    ParamSet p = vector_params({0.1, 0.2, 0.3});
    prl_proximal_step(p, ref, 0.0, NormKind::l2);
    CHECK(p[0].tensor.data()[0] == 0.1);
  }
}
