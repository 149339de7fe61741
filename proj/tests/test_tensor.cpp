// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <random>

#include <doctest.h>

#include "prl/grad_check.hpp"
#include "prl/tensor.hpp"

using namespace prl;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }
std::vector<double> grads(const Tensor& t) { return {t.grad().begin(), t.grad().end()}; }

}  // namespace

TEST_CASE("matmul, relu and pairwise distances on hand-sized inputs") {
  const Tensor m = matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{1}, {1}}));
  CHECK(m.shape() == Shape{2, 1});
  CHECK(values(m) == std::vector<double>{3, 7});

  CHECK(values(relu(Tensor::vector({-1, 0, 2}))) == std::vector<double>{0, 0, 2});

  const Tensor d = pairwise_sq_dists(Tensor::matrix({{0, 0}}), Tensor::matrix({{3, 4}}));
  CHECK(d.shape() == Shape{1, 1});
  CHECK(d.item() == 25.0);
}

TEST_CASE("elementwise and reduction ops") {
  const Tensor x = Tensor::vector({1, -2, 3});
  CHECK(values(abs(x)) == std::vector<double>{1, 2, 3});
  CHECK(values(square(x)) == std::vector<double>{1, 4, 9});
  CHECK(values(neg(x)) == std::vector<double>{-1, 2, -3});
  CHECK(values(scale(x, 2.0)) == std::vector<double>{2, -4, 6});
  CHECK(reduce_sum(x).item() == 2.0);
  CHECK(reduce_mean(x).item() == doctest::Approx(2.0 / 3.0));
  CHECK(exp(Tensor::scalar(0.0)).item() == 1.0);

  const Tensor rows = add_broadcast_row(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{10, 20}}));
  CHECK(values(rows) == std::vector<double>{11, 22, 13, 24});
  const Tensor cat = concat_rows(Tensor::matrix({{1, 2}}), Tensor::matrix({{3, 4}, {5, 6}}));
  CHECK(cat.shape() == Shape{3, 2});
  CHECK(values(cat) == std::vector<double>{1, 2, 3, 4, 5, 6});
}

TEST_CASE("shape mismatch names the op and the shapes") {
  try {
    (void)matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{1, 2}}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(e.op() == OpKind::matmul);
    REQUIRE(e.shapes().size() == 2);
    CHECK(e.shapes()[0] == Shape{1, 2});
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
  }
  CHECK_THROWS_AS(add(Tensor::vector({1, 2}), Tensor::vector({1, 2, 3})), ShapeError);
}

TEST_CASE("non-finite inputs are rejected") {
  const Tensor bad = Tensor::vector({1.0, std::numeric_limits<double>::quiet_NaN()});
  CHECK_THROWS_AS(relu(bad), NonFiniteError);
  CHECK_THROWS_AS(exp(Tensor::scalar(1000.0)), NonFiniteError);
}

TEST_CASE("backward through relu and mean") {
  Tensor x(Shape{2}, {-1.0, 2.0}, true);
  Tape tape;
  tape.backward(reduce_mean(relu(x)));
  CHECK(grads(x) == std::vector<double>{0.0, 0.5});
}

TEST_CASE("abs uses the sign subgradient, 0 at the kink") {
  Tensor x(Shape{3}, {3.0, -2.0, 0.0}, true);
  Tape tape;
  tape.backward(reduce_sum(abs(x)));
  CHECK(grads(x) == std::vector<double>{1.0, -1.0, 0.0});
}

TEST_CASE("backward contract: scalar output, single use") {
  Tensor x(Shape{2}, {1.0, 2.0}, true);
  {
    Tape tape;
    const Tensor y = square(x);
    CHECK_THROWS_AS(tape.backward(y), AutodiffError);
  }
  {
    Tape tape;
    const Tensor y = reduce_sum(square(x));
    tape.backward(y);
    CHECK(tape.consumed());
    CHECK_THROWS_AS(tape.backward(y), AutodiffError);
  }
}

TEST_CASE("gradients accumulate across tapes until zeroed") {
  Tensor x(Shape{1}, {3.0}, true);
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    tape.backward(reduce_sum(square(x)));
  }
  CHECK(x.grad()[0] == 12.0);
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("gradient is linear in the output") {
  Tensor a(Shape{2, 2}, {0.3, -1.2, 0.7, 2.0}, true);
  Tensor b(Shape{2, 2}, {0.3, -1.2, 0.7, 2.0}, true);
  {
    Tape tape;
    tape.backward(reduce_sum(square(matmul(a, a))));
  }
  {
    Tape tape;
    tape.backward(scale(reduce_sum(square(matmul(b, b))), 3.0));
  }
  for (std::size_t i = 0; i < 4; ++i) CHECK(b.grad()[i] == doctest::Approx(3.0 * a.grad()[i]).epsilon(1e-14));
}

TEST_CASE("same ops on same inputs are bit-identical") {
  auto run = [] {
    Tensor w(Shape{3, 2}, {0.1, -0.4, 0.9, 0.2, -0.3, 0.5}, true);
    const Tensor x = Tensor::matrix({{1, 2, 3}, {-1, 0.5, 2}});
    Tape tape;
    const Tensor y = reduce_mean(exp(neg(pairwise_sq_dists(matmul(x, w), matmul(x, w)))));
    tape.backward(y);
    return std::pair{y.item(), grads(w)};
  };
  CHECK(run() == run());
}

TEST_CASE("two-layer MLP matches finite differences") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  auto rand = [&](std::size_t r, std::size_t c) {
    std::vector<double> v(r * c);
    for (auto& e : v) e = n(rng);
    return Tensor::matrix(r, c, std::move(v));
  };
  const Tensor x = rand(4, 3);
  ParamSet p;
  p.add("w1", rand(3, 5));
  p.add("b1", rand(1, 5));
  p.add("w2", rand(5, 2));
  for (auto& e : p) e.tensor.set_requires_grad(true);
  const auto f = [&](const ParamSet& ps) {
    const Tensor h = relu(add_broadcast_row(matmul(x, ps[0].tensor), ps[1].tensor));
    return reduce_mean(square(matmul(h, ps[2].tensor)));
  };
  const GradCheckReport r = grad_check(f, p, 1e-5, 1e-6);
  CHECK(r.pass);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("grad_check on closed forms") {
  SUBCASE("sum of squares") {
    ParamSet p;
    p.add("x", Tensor(Shape{2}, {1.0, 2.0}, true));
    const GradCheckReport r =
        grad_check([](const ParamSet& ps) { return reduce_sum(square(ps[0].tensor)); }, p, 1e-5, 1e-4);
    CHECK(r.pass);
    CHECK(r.max_rel_error < 1e-9);
    Tape tape;
    tape.backward(reduce_sum(square(p[0].tensor)));
    CHECK(grads(p[0].tensor) == std::vector<double>{2.0, 4.0});
  }
  SUBCASE("L1 away from the kink") {
    ParamSet p;
    p.add("x", Tensor(Shape{1}, {0.5}, true));
    const GradCheckReport r = grad_check([](const ParamSet& ps) { return reduce_sum(abs(ps[0].tensor)); }, p, 1e-5, 1e-4);
    CHECK(r.pass);
    Tape tape;
    tape.backward(reduce_sum(abs(p[0].tensor)));
    CHECK(p[0].tensor.grad()[0] == 1.0);
  }
  SUBCASE("a tampered gradient is caught") {
    ParamSet p;
    p.add("x", Tensor(Shape{1}, {0.5}, true));
    const GradCheckReport r = grad_check([](const ParamSet& ps) { return reduce_sum(abs(ps[0].tensor)); }, p, 1e-5,
                                         1e-4, 1e-6, [](std::vector<double>& g) { g[0] = -g[0]; });
    CHECK_FALSE(r.pass);
    CHECK(r.worst == "x[0]");
  }
  SUBCASE("non-finite objective") {
    ParamSet p;
    p.add("x", Tensor(Shape{1}, {700.0}, true));
    CHECK_THROWS(grad_check([](const ParamSet& ps) { return reduce_sum(exp(scale(ps[0].tensor, 2.0))); }, p, 1e-5,
                            1e-4));
  }
}
