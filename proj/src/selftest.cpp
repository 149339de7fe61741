// SPDX-License-Identifier: Apache-2.0

#include "prl/selftest.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "prl/data.hpp"
#include "prl/grad_check.hpp"
#include "prl/losses.hpp"
#include "prl/schedule.hpp"

namespace prl {

namespace {

constexpr double kStep = 1e-5;
constexpr double kTol = 1e-4;

Tensor random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(r * c);
  for (auto& x : v) x = n(rng);
  return Tensor::matrix(r, c, std::move(v));
}

ParamSet one_param(const std::string& name, Tensor t) {
  ParamSet p;
  t.set_requires_grad(true);
  p.add(name, std::move(t));
  return p;
}

// Copy of `base` moved away from it by at least `margin` per scalar, so the
// L1 term stays differentiable under finite differences.
ParamSet offset_copy(const ParamSet& base, std::mt19937_64& rng, double margin) {
  std::uniform_real_distribution<double> mag(margin, 3.0 * margin);
  std::bernoulli_distribution sign(0.5);
  ParamSet out = clone_params(base);
  for (auto& e : out) {
    for (auto& x : e.tensor.mutable_data()) x += sign(rng) ? mag(rng) : -mag(rng);
  }
  return out;
}

std::vector<int> random_labels(std::mt19937_64& rng, std::size_t n, int k) {
  std::uniform_int_distribution<int> d(0, k - 1);
  std::vector<int> y(n);
  for (auto& v : y) v = d(rng);
  return y;
}

SelftestResult check_gradient(const std::string& name, const ParamObjective& f, ParamSet& params,
                              const std::function<void(std::vector<double>&)>& tamper = {}) {
  const GradCheckReport r = grad_check(f, params, kStep, kTol, 1e-6, tamper);
  return {"grad_check " + name, r.pass,
          fmt::format("max relative error {:.3g} at {} (tolerance {:.0e})", r.max_rel_error, r.worst, kTol)};
}

double brute_force_gaussian_mmd(const Tensor& s, const Tensor& t, double width) {
  auto k = [&](const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
    double d2 = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c) d2 += (a(i, c) - b(j, c)) * (a(i, c) - b(j, c));
    return std::exp(-d2 / width);
  };
  auto mean_k = [&](const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < b.rows(); ++j) acc += k(a, i, b, j);
    return acc / static_cast<double>(a.rows() * b.rows());
  };
  return std::max(0.0, mean_k(s, s) + mean_k(t, t) - 2.0 * mean_k(s, t));
}

std::string flags_string(const std::vector<bool>& flags) {
  std::string s;
  for (bool f : flags) s += f ? 'T' : 'F';
  return s;
}

void gradient_cases(std::uint64_t seed, const SelftestOptions& opts, std::vector<SelftestResult>& out) {
  std::mt19937_64 rng(derive_seed(seed, 11));
  const std::string tag = fmt::format(" (seed {})", seed);

  {
    const Tensor x = random_matrix(rng, 6, 4);
    const auto y = random_labels(rng, 6, 3);
    ParamSet p = one_param("weight", random_matrix(rng, 4, 3));
    out.push_back(check_gradient(
        "classification_loss" + tag, [&](const ParamSet& ps) { return classification_loss(matmul(x, ps[0].tensor), y); },
        p));
  }
  for (const KernelKind kernel : {KernelKind::gaussian, KernelKind::linear}) {
    ParamSet p;
    p.add("source_features", random_matrix(rng, 5, 3));
    p.add("target_features", random_matrix(rng, 4, 3, 1.5));
    for (auto& e : p) e.tensor.set_requires_grad(true);
    const MMDConfig cfg{kernel, 4.0};
    out.push_back(check_gradient(
        std::string("mmd_loss[") + (kernel == KernelKind::gaussian ? "gaussian" : "linear") + "]" + tag,
        [&](const ParamSet& ps) { return mmd_loss(ps[0].tensor, ps[1].tensor, cfg); }, p));
  }
  for (const NormKind norm : {NormKind::l1, NormKind::l2}) {
    ParamSet target;
    target.add("layer.weight", random_matrix(rng, 3, 4));
    target.add("layer.bias", random_matrix(rng, 1, 4));
    for (auto& e : target) e.tensor.set_requires_grad(true);
    const ParamSet reference = offset_copy(target, rng, 0.1).detached();
    std::function<void(std::vector<double>&)> tamper;
    if (norm == NormKind::l1 && opts.flip_l1_gradient) {
      tamper = [](std::vector<double>& g) {
        for (auto& v : g) v = -v;
      };
    }
    out.push_back(check_gradient(std::string("prl_loss[") + (norm == NormKind::l1 ? "l1" : "l2") + "]" + tag,
                                 [&](const ParamSet& ps) { return prl_loss(ps, reference, norm); }, target, tamper));
  }

  EncoderConfig ec;
  ec.input_dim = 2;
  ec.hidden_dims = {5};
  ec.bottleneck_dim = 3;
  ec.init_seed = derive_seed(seed, 12);
  auto [encoder, source_params] = init_encoder(ec);
  const ParamSet target_params = offset_copy(source_params, rng, 0.05);
  const Tensor xs = random_matrix(rng, 6, 2);
  const Tensor xt = random_matrix(rng, 5, 2, 1.3);
  const auto ys = random_labels(rng, 6, 2);
  const Classifier classifier(ec.feature_dim(), 2, derive_seed(seed, 13));
  const MMDConfig mmd{KernelKind::gaussian, 3.0};
  const LossWeights weights{0.5, NormKind::l1};
  {
    ParamSet pt = clone_params(target_params);
    const ParamSet ps = source_params.detached();
    const Tensor fs = encoder.encode(ps, xs);
    out.push_back(check_gradient(
        "target_objective" + tag,
        [&](const ParamSet& p) { return target_objective(fs, encoder.encode(p, xt), p, ps, mmd, weights); }, pt));
  }
  {
    ParamSet ps = clone_params(source_params);
    const ParamSet pt = target_params.detached();
    const Tensor ft = encoder.encode(pt, xt);
    out.push_back(check_gradient("source_objective" + tag,
                                 [&](const ParamSet& p) {
                                   const Tensor fs = encoder.encode(p, xs);
                                   return source_objective(classify(classifier, fs), ys, fs, ft, p, pt, mmd, weights);
                                 },
                                 ps));
  }
}

void mmd_oracle_cases(std::uint64_t seed, std::vector<SelftestResult>& out) {
  std::mt19937_64 rng(derive_seed(seed, 21));
  std::uniform_int_distribution<std::size_t> size(1, 10);
  double worst_gauss = 0.0, worst_linear = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t dim = size(rng) % 4 + 1;
    const Tensor s = random_matrix(rng, size(rng), dim);
    const Tensor t = random_matrix(rng, size(rng), dim, 1.5);
    const double width = 0.5 + static_cast<double>(trial);
    const double got = mmd_loss(s, t, {KernelKind::gaussian, width}).item();
    worst_gauss = std::max(worst_gauss, std::fabs(got - brute_force_gaussian_mmd(s, t, width)));

    double d2 = 0.0;
    for (std::size_t c = 0; c < dim; ++c) {
      double ms = 0.0, mt = 0.0;
      for (std::size_t i = 0; i < s.rows(); ++i) ms += s(i, c);
      for (std::size_t i = 0; i < t.rows(); ++i) mt += t(i, c);
      const double diff = ms / static_cast<double>(s.rows()) - mt / static_cast<double>(t.rows());
      d2 += diff * diff;
    }
    worst_linear = std::max(worst_linear, std::fabs(mmd_loss(s, t, {KernelKind::linear, 1.0}).item() - d2));
  }
  const std::string tag = fmt::format(" (seed {})", seed);
  out.push_back({"mmd_oracle[gaussian]" + tag, worst_gauss <= 1e-10,
                 fmt::format("max deviation {:.3g} from the double-sum oracle", worst_gauss)});
  out.push_back({"mmd_oracle[linear]" + tag, worst_linear <= 1e-9,
                 fmt::format("max deviation {:.3g} from the mean-difference oracle", worst_linear)});
}

void schedule_cases(std::vector<SelftestResult>& out) {
  {
    ScheduleState state;
    std::vector<bool> flags;
    for (int e = 0; e < 6; ++e) flags.push_back(schedule_step(schedule::InTurn{2}, state, {}).source_trainable);
    const std::string got = flags_string(flags);
    out.push_back({"schedule inturn(k=2)", got == "FFTTFF", "source flags " + got + ", expected FFTTFF"});
  }
  {
    // Falls to a plateau, then rises again: the trigger must stay latched.
    const std::vector<double> mmd{1.0, 0.5, 0.1, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05, 0.9, 0.9, 0.9};
    schedule::Warmup w;
    w.patience = 3;
    w.eps_small = 0.2;
    ScheduleState state;
    std::vector<bool> flags;
    for (std::size_t e = 0; e <= mmd.size(); ++e)
      flags.push_back(schedule_step(w, state, std::span<const double>(mmd).first(e)).source_trainable);
    bool monotone = true;
    for (std::size_t e = 1; e < flags.size(); ++e) monotone = monotone && (!flags[e - 1] || flags[e]);
    const bool fired = flags.back();
    out.push_back({"schedule warmup latch", monotone && fired, "source flags " + flags_string(flags)});
  }
  {
    const bool a = plateau_detected(std::vector<double>{1.0, 0.5, 0.25}, 2, 0.1, 10.0);
    const bool b = plateau_detected(std::vector<double>{0.01, 0.0099, 0.00989}, 2, 0.05, 0.02);
    const bool c = plateau_detected(std::vector<double>{0.3}, 2, 0.05, 1.0);
    out.push_back({"schedule plateau table", !a && b && !c,
                   fmt::format("got ({}, {}, {}), expected (false, true, false)", a, b, c)});
  }
}

}  // namespace

std::vector<SelftestResult> run_selftest(const SelftestOptions& opts) {
  std::vector<SelftestResult> results;
  auto done = [&] { return opts.stop_at_first_failure && !results.empty() && !results.back().pass; };
  auto run = [&](auto&& produce) {
    if (done()) return;
    std::vector<SelftestResult> batch;
    try {
      produce(batch);
    } catch (const std::exception& e) {
      batch.push_back({"exception", false, e.what()});
    }
    for (auto& r : batch) {
      if (done()) break;
      results.push_back(std::move(r));
    }
  };
  for (int s = 0; s < opts.seeds; ++s)
    run([&](auto& b) { gradient_cases(static_cast<std::uint64_t>(s), opts, b); });
  for (int s = 0; s < opts.seeds; ++s) run([&](auto& b) { mmd_oracle_cases(static_cast<std::uint64_t>(s), b); });
  run([&](auto& b) { schedule_cases(b); });
  return results;
}

}  // namespace prl
