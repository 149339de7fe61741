// SPDX-License-Identifier: Apache-2.0

#include "prl/nn.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include <fmt/format.h>

namespace prl {

void ParamSet::add(std::string name, Tensor tensor) {
  for (const auto& e : entries_)
    if (e.name == name) throw Error("ParamSet: duplicate parameter name '" + name + "'");
  entries_.push_back({std::move(name), std::move(tensor)});
}

const Tensor& ParamSet::at(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw Error("ParamSet: no parameter named '" + std::string(name) + "'");
}

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

void ParamSet::freeze() {
  frozen_ = true;
  for (auto& e : entries_) {
    e.tensor.set_requires_grad(false);
    e.tensor.clear_grad();
  }
}

ParamSet ParamSet::detached() const {
  ParamSet out;
  for (const auto& e : entries_) out.entries_.push_back({e.name, e.tensor.detach()});
  out.frozen_ = frozen_;
  return out;
}

void ParamSet::zero_grad() {
  for (auto& e : entries_) e.tensor.clear_grad();
}

ParamSet clone_params(const ParamSet& src) {
  ParamSet out;
  for (const auto& e : src) {
    Tensor copy = e.tensor.detach();
    copy.set_requires_grad(true);
    out.add(e.name, std::move(copy));
  }
  return out;
}

void check_aligned(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) {
    throw AlignmentError(fmt::format("parameter sets differ in length: {} vs {}", a.size(), b.size()));
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name) {
      throw AlignmentError(fmt::format("parameter {} name mismatch: '{}' vs '{}'", i, a[i].name, b[i].name));
    }
    if (a[i].tensor.shape() != b[i].tensor.shape()) {
      throw AlignmentError(fmt::format("parameter {} ('{}') shape mismatch: {} vs {}", i, a[i].name,
                                       to_string(a[i].tensor.shape()), to_string(b[i].tensor.shape())));
    }
  }
}

void sgd_step(ParamSet& params, double lr, double weight_decay) {
  if (params.frozen()) throw Error("sgd_step: parameter set is frozen");
  for (const auto& e : params) {
    if (!e.tensor.has_grad()) throw AutodiffError("sgd_step: parameter '" + e.name + "' has no gradient");
  }
  for (auto& e : params) {
    auto p = e.tensor.mutable_data();
    auto g = e.tensor.grad();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * (g[i] + weight_decay * p[i]);
    e.tensor.clear_grad();
  }
}

// ---------------------------------------------------------------------------
// Serialization

namespace {
constexpr std::string_view kParamsHeader = "PRLPARAMS/1";
}

void write_params(std::ostream& os, const ParamSet& params) {
  os << kParamsHeader << '\n' << params.size() << '\n';
  for (const auto& e : params) {
    const auto& shape = e.tensor.shape();
    os << e.name << ' ' << shape.size();
    for (auto d : shape) os << ' ' << d;
    os << '\n';
    const auto data = e.tensor.data();
    for (std::size_t i = 0; i < data.size(); ++i) os << (i ? " " : "") << fmt::format("{:.17g}", data[i]);
    os << '\n';
  }
}

ParamSet read_params(std::istream& is) {
  std::string header;
  if (!std::getline(is, header) || header != kParamsHeader) {
    throw Error("read_params: missing '" + std::string(kParamsHeader) + "' header");
  }
  std::size_t count = 0;
  if (!(is >> count)) throw Error("read_params: missing entry count");
  ParamSet out;
  for (std::size_t i = 0; i < count; ++i) {
    std::string name;
    std::size_t rank = 0;
    if (!(is >> name >> rank)) throw Error(fmt::format("read_params: truncated entry {}", i));
    Shape shape(rank);
    for (auto& d : shape)
      if (!(is >> d)) throw Error("read_params: truncated shape for '" + name + "'");
    std::vector<double> data(element_count(shape));
    for (auto& v : data) {
      std::string token;
      if (!(is >> token)) throw Error("read_params: truncated values for '" + name + "'");
      v = std::stod(token);
    }
    out.add(std::move(name), Tensor(std::move(shape), std::move(data), true));
  }
  return out;
}

std::string serialize_params(const ParamSet& params) {
  std::ostringstream os;
  write_params(os, params);
  return os.str();
}

ParamSet deserialize_params(const std::string& text) {
  std::istringstream is(text);
  return read_params(is);
}

// ---------------------------------------------------------------------------
// Encoder

void EncoderConfig::validate() const {
  if (input_dim == 0) throw Error("encoder: input_dim must be positive");
  if (hidden_dims.empty() && !bottleneck_dim) throw Error("encoder: needs at least one layer");
  for (auto h : hidden_dims)
    if (h == 0) throw Error("encoder: hidden_dims must be positive");
  if (bottleneck_dim && *bottleneck_dim == 0) throw Error("encoder: bottleneck_dim must be positive");
}

std::size_t EncoderConfig::feature_dim() const {
  if (bottleneck_dim) return *bottleneck_dim;
  return hidden_dims.empty() ? input_dim : hidden_dims.back();
}

Encoder::Encoder(EncoderConfig config) : config_(std::move(config)) { config_.validate(); }

Tensor Encoder::encode(const ParamSet& params, const Tensor& x) const {
  if (x.shape().size() != 2 || x.cols() != config_.input_dim) {
    throw ShapeError(OpKind::matmul, {x.shape(), Shape{config_.input_dim}}, "encoder input width");
  }
  Tensor h = x;
  std::size_t idx = 0;
  for (std::size_t layer = 0; layer < config_.hidden_dims.size(); ++layer, idx += 2) {
    h = relu(add_broadcast_row(matmul(h, params[idx].tensor), params[idx + 1].tensor));
  }
  if (config_.bottleneck_dim) {
    h = add_broadcast_row(matmul(h, params[idx].tensor), params[idx + 1].tensor);
  }
  return h;
}

namespace {

Tensor glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-s, s);
  std::vector<double> w(fan_in * fan_out);
  for (auto& v : w) v = dist(rng);
  return Tensor({fan_in, fan_out}, std::move(w), true);
}

void add_linear(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t out, std::mt19937_64& rng) {
  params.add(prefix + ".weight", glorot(in, out, rng));
  params.add(prefix + ".bias", Tensor::zeros({1, out}, true));
}

}  // namespace

std::pair<Encoder, ParamSet> init_encoder(const EncoderConfig& config) {
  Encoder encoder(config);
  std::mt19937_64 rng(config.init_seed);
  ParamSet params;
  std::size_t in = config.input_dim;
  for (std::size_t i = 0; i < config.hidden_dims.size(); ++i) {
    add_linear(params, "hidden" + std::to_string(i), in, config.hidden_dims[i], rng);
    in = config.hidden_dims[i];
  }
  if (config.bottleneck_dim) add_linear(params, "bottleneck", in, *config.bottleneck_dim, rng);
  return {std::move(encoder), std::move(params)};
}

// ---------------------------------------------------------------------------
// Classifier

Classifier::Classifier(std::size_t feature_dim, std::size_t num_classes, std::uint64_t seed) {
  if (feature_dim == 0 || num_classes < 2) throw Error("classifier: needs feature_dim >= 1 and K >= 2");
  std::mt19937_64 rng(seed);
  add_linear(params_, "classifier", feature_dim, num_classes, rng);
}

Classifier::Classifier(ParamSet params) : params_(std::move(params)) {
  if (params_.size() != 2 || params_[0].tensor.shape().size() != 2 ||
      params_[1].tensor.size() != params_[0].tensor.cols()) {
    throw Error("classifier: expected one weight matrix and one matching bias");
  }
}

std::size_t Classifier::input_dim() const { return params_[0].tensor.rows(); }
std::size_t Classifier::num_classes() const { return params_[0].tensor.cols(); }

Tensor classify(const Classifier& classifier, const Tensor& features) {
  const auto& p = classifier.params();
  return add_broadcast_row(matmul(features, p[0].tensor), p[1].tensor);
}

}  // namespace prl
