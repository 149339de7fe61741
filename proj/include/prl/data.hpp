// SPDX-License-Identifier: Apache-2.0
//
// Synthetic domain-shift datasets, CSV ingestion and the unpaired
// two-domain batch sampler.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "prl/tensor.hpp"

namespace prl {

struct DomainDataset {
  Tensor features;  // n x m
  std::optional<std::vector<int>> labels;
  std::size_t num_classes = 0;
  std::string domain_tag;

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
  bool labeled() const { return labels.has_value(); }

  /// Rows selected by index, labels carried along.
  DomainDataset subset(std::span<const std::size_t> rows) const;
  void validate() const;
};

/// Target-domain data as the adaptation loop sees it: features only.
/// There is no way to get labels back out of this type.
class UnlabeledDataset {
 public:
  explicit UnlabeledDataset(const DomainDataset& ds) : features_(ds.features), tag_(ds.domain_tag) {}
  const Tensor& features() const noexcept { return features_; }
  std::size_t size() const { return features_.rows(); }
  std::size_t dim() const { return features_.cols(); }
  const std::string& domain_tag() const noexcept { return tag_; }

 private:
  Tensor features_;
  std::string tag_;
};

/// Affine shift x -> R(rotation) * (scale * x) + translation, with the
/// rotation acting on the first two coordinates, followed by optional
/// isotropic Gaussian noise.
struct ShiftSpec {
  double rotation_deg = 0.0;
  std::vector<double> translation;  // empty means zero
  double scale = 1.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  void validate(std::size_t dim) const;
};

/// n/2 points per class on two interleaved half circles, centred at the
/// origin before the shift is applied. K = 2, m = 2.
DomainDataset make_two_moons(std::size_t n, double noise_sigma, const ShiftSpec& shift);

/// K isotropic unit-variance Gaussian clusters with centres drawn uniformly
/// from [-5, 5]^m by centers_seed; points from shift.seed.
DomainDataset make_blobs(std::size_t n, std::size_t num_classes, std::size_t dim, std::uint64_t centers_seed,
                         const ShiftSpec& shift);

struct CsvOptions {
  bool has_labels = true;
  bool header = false;
};

/// Rows of m floats with an optional trailing integer label column.
DomainDataset load_csv_dataset(const std::filesystem::path& path, const CsvOptions& options = {});
void write_csv_dataset(const std::filesystem::path& path, const DomainDataset& ds);

struct SourceBatch {
  Tensor features;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

struct TargetBatch {
  Tensor features;
  std::vector<std::size_t> indices;
};

struct BatchPair {
  SourceBatch source;
  TargetBatch target;
};

/// Independent without-replacement shuffles per domain. An epoch yields
/// max(n_S / b_S, n_T / b_T) pairs (partial batches dropped); the domain
/// that runs out first is reshuffled and keeps cycling.
class UnpairedBatchSampler {
 public:
  UnpairedBatchSampler(const DomainDataset& source, const UnlabeledDataset& target, std::size_t source_batch,
                       std::size_t target_batch);

  std::size_t batches_per_epoch() const noexcept { return pairs_; }
  std::vector<BatchPair> epoch(std::uint64_t epoch_seed) const;

 private:
  const DomainDataset* source_;
  const UnlabeledDataset* target_;
  std::size_t b_s_, b_t_, pairs_;
};

/// Shuffled minibatches of one labeled dataset (partial last batch kept).
std::vector<SourceBatch> labeled_batches(const DomainDataset& ds, std::size_t batch_size, std::uint64_t seed);

/// Rows of x picked by index.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

/// Deterministic seeding shared by all components: mixes a base seed with a
/// stream identifier.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

// Declarative dataset descriptions used by configs and grids.
struct TwoMoonsSpec {
  std::size_t n = 600;
  double noise_sigma = 0.1;
  ShiftSpec shift;
};

struct BlobsSpec {
  std::size_t n = 600;
  std::size_t num_classes = 3;
  std::size_t dim = 2;
  std::uint64_t centers_seed = 0;
  ShiftSpec shift;
};

struct CsvSpec {
  std::filesystem::path path;
  CsvOptions options;
};

using DatasetSpec = std::variant<TwoMoonsSpec, BlobsSpec, CsvSpec>;

/// Builds the dataset; seed_offset is added to generator seeds so one run
/// seed moves every random stream at once. CSV data ignores it.
DomainDataset materialize(const DatasetSpec& spec, std::uint64_t seed_offset, const std::string& tag);

}  // namespace prl
