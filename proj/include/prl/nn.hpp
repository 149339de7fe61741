// SPDX-License-Identifier: Apache-2.0
//
// MLP encoders, the linear classifier head, parameter sets and the
// SGD-with-weight-decay optimizer.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "prl/tensor.hpp"

namespace prl {

/// Ordered, named collection of trainable tensors. Two ParamSets built from
/// the same config are positionally aligned: entry i of one corresponds to
/// entry i of the other.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  void add(std::string name, Tensor tensor);

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const Entry& operator[](std::size_t i) const { return entries_.at(i); }
  Entry& operator[](std::size_t i) { return entries_.at(i); }
  const Tensor& at(std::string_view name) const;

  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }
  auto begin() noexcept { return entries_.begin(); }
  auto end() noexcept { return entries_.end(); }

  std::vector<std::string> names() const;
  /// Total number of scalar parameters.
  std::size_t scalar_count() const;

  bool frozen() const noexcept { return frozen_; }
  /// Marks the set immutable for the optimizer and stops gradient tracking.
  void freeze();

  /// Constant copies (no gradient tracking) for forward-only use.
  ParamSet detached() const;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
  bool frozen_ = false;
};

class AlignmentError : public Error {
 public:
  using Error::Error;
};

/// Deep copy with independent storage; the copy is trainable.
ParamSet clone_params(const ParamSet& src);

/// Throws AlignmentError naming the first position where names or shapes differ.
void check_aligned(const ParamSet& a, const ParamSet& b);

/// p <- p - lr * (grad + weight_decay * p) for every scalar, then zeroes grads.
void sgd_step(ParamSet& params, double lr, double weight_decay);

/// Text format, first line "PRLPARAMS/1". Values use 17 significant digits
/// so a write/read cycle is exact.
void write_params(std::ostream& os, const ParamSet& params);
ParamSet read_params(std::istream& is);
std::string serialize_params(const ParamSet& params);
ParamSet deserialize_params(const std::string& text);

struct EncoderConfig {
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden_dims{64, 32};
  /// Optional linear adaptation layer appended after the hidden stack.
  std::optional<std::size_t> bottleneck_dim;
  std::uint64_t init_seed = 0;

  void validate() const;
  std::size_t feature_dim() const;
};

/// Stateless description of an MLP; the weights live in a ParamSet so one
/// encoder definition can drive the source, target and shared streams.
class Encoder {
 public:
  explicit Encoder(EncoderConfig config);

  const EncoderConfig& config() const noexcept { return config_; }
  std::size_t input_dim() const noexcept { return config_.input_dim; }
  std::size_t feature_dim() const { return config_.feature_dim(); }

  /// Hidden layers are affine + relu; the bottleneck, when present, is affine only.
  Tensor encode(const ParamSet& params, const Tensor& x) const;

 private:
  EncoderConfig config_;
};

/// Glorot-uniform weights, zero biases, deterministic in config.init_seed.
std::pair<Encoder, ParamSet> init_encoder(const EncoderConfig& config);

/// Single linear layer feature_dim -> K.
class Classifier {
 public:
  Classifier(std::size_t feature_dim, std::size_t num_classes, std::uint64_t seed);
  explicit Classifier(ParamSet params);

  std::size_t input_dim() const;
  std::size_t num_classes() const;

  const ParamSet& params() const noexcept { return params_; }
  ParamSet& params() noexcept { return params_; }
  bool frozen() const noexcept { return params_.frozen(); }
  void freeze() { params_.freeze(); }

 private:
  ParamSet params_;
};

/// Pre-softmax logits F W + b.
Tensor classify(const Classifier& classifier, const Tensor& features);

}  // namespace prl
