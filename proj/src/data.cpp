// SPDX-License-Identifier: Apache-2.0

#include "prl/data.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

namespace prl {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t m = x.cols();
  const auto src = x.data();
  std::vector<double> out;
  out.reserve(rows.size() * m);
  for (auto r : rows) {
    if (r >= x.rows()) throw Error(fmt::format("gather_rows: row {} out of range {}", r, x.rows()));
    out.insert(out.end(), src.begin() + static_cast<std::ptrdiff_t>(r * m),
               src.begin() + static_cast<std::ptrdiff_t>((r + 1) * m));
  }
  return Tensor({rows.size(), m}, std::move(out));
}

DomainDataset DomainDataset::subset(std::span<const std::size_t> rows) const {
  DomainDataset out;
  out.features = gather_rows(features, rows);
  if (labels) {
    std::vector<int> picked;
    picked.reserve(rows.size());
    for (auto r : rows) picked.push_back((*labels)[r]);
    out.labels = std::move(picked);
  }
  out.num_classes = num_classes;
  out.domain_tag = domain_tag;
  return out;
}

void DomainDataset::validate() const {
  if (!features.defined() || features.shape().size() != 2) throw Error("dataset: features must be an n x m matrix");
  for (double v : features.data())
    if (!std::isfinite(v)) throw Error("dataset '" + domain_tag + "': non-finite feature value");
  if (labels) {
    if (labels->size() != features.rows()) throw Error("dataset '" + domain_tag + "': label count mismatch");
    for (int y : *labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
        throw Error(fmt::format("dataset '{}': label {} outside [0, {})", domain_tag, y, num_classes));
      }
    }
  }
}

void ShiftSpec::validate(std::size_t dim) const {
  if (!(scale > 0.0)) throw Error(fmt::format("shift: scale must be positive, got {}", scale));
  if (noise_sigma < 0.0) throw Error("shift: noise_sigma must be non-negative");
  if (!translation.empty() && translation.size() != dim) {
    throw Error(fmt::format("shift: translation has {} entries, data has {} dims", translation.size(), dim));
  }
  if (dim < 2 && rotation_deg != 0.0) throw Error("shift: rotation needs at least two dimensions");
}

namespace {

void apply_shift(std::vector<double>& x, std::size_t dim, const ShiftSpec& shift, std::mt19937_64& rng) {
  const double theta = shift.rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t n = x.size() / dim;
  for (std::size_t i = 0; i < n; ++i) {
    double* row = x.data() + i * dim;
    for (std::size_t d = 0; d < dim; ++d) row[d] *= shift.scale;
    if (dim >= 2) {
      const double a = row[0], b = row[1];
      row[0] = c * a - s * b;
      row[1] = s * a + c * b;
    }
    if (!shift.translation.empty())
      for (std::size_t d = 0; d < dim; ++d) row[d] += shift.translation[d];
    if (shift.noise_sigma > 0.0)
      for (std::size_t d = 0; d < dim; ++d) row[d] += shift.noise_sigma * noise(rng);
  }
}

}  // namespace

DomainDataset make_two_moons(std::size_t n, double noise_sigma, const ShiftSpec& shift) {
  if (n < 2 || n % 2 != 0) throw Error(fmt::format("make_two_moons: n must be even and >= 2, got {}", n));
  if (noise_sigma < 0.0) throw Error("make_two_moons: noise_sigma must be non-negative");
  shift.validate(2);
  const std::size_t half = n / 2;
  std::vector<double> x(n * 2);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < half; ++i) {
    const double t = half > 1 ? std::numbers::pi * static_cast<double>(i) / static_cast<double>(half - 1) : 0.0;
    // outer moon, then inner moon; both recentred by the (0.5, 0.25) centroid
    x[2 * i] = std::cos(t) - 0.5;
    x[2 * i + 1] = std::sin(t) - 0.25;
    y[i] = 0;
    x[2 * (half + i)] = 1.0 - std::cos(t) - 0.5;
    x[2 * (half + i) + 1] = 0.5 - std::sin(t) - 0.25;
    y[half + i] = 1;
  }
  std::mt19937_64 rng(shift.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (auto& v : x) v += noise_sigma * noise(rng);
  apply_shift(x, 2, shift, rng);

  DomainDataset ds;
  ds.features = Tensor({n, 2}, std::move(x));
  ds.labels = std::move(y);
  ds.num_classes = 2;
  ds.domain_tag = "two_moons";
  return ds;
}

DomainDataset make_blobs(std::size_t n, std::size_t num_classes, std::size_t dim, std::uint64_t centers_seed,
                         const ShiftSpec& shift) {
  if (num_classes < 2 || dim < 2 || n < num_classes) {
    throw Error(fmt::format("make_blobs: need K >= 2, m >= 2, n >= K (got n={}, K={}, m={})", n, num_classes, dim));
  }
  shift.validate(dim);
  std::mt19937_64 center_rng(centers_seed);
  std::uniform_real_distribution<double> center_dist(-5.0, 5.0);
  std::vector<double> centers(num_classes * dim);
  for (auto& c : centers) c = center_dist(center_rng);

  std::mt19937_64 rng(shift.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> x(n * dim);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % num_classes;
    y[i] = static_cast<int>(k);
    for (std::size_t d = 0; d < dim; ++d) x[i * dim + d] = centers[k * dim + d] + noise(rng);
  }
  apply_shift(x, dim, shift, rng);

  DomainDataset ds;
  ds.features = Tensor({n, dim}, std::move(x));
  ds.labels = std::move(y);
  ds.num_classes = num_classes;
  ds.domain_tag = "blobs";
  return ds;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

DomainDataset load_csv_dataset(const std::filesystem::path& path, const CsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error("load_csv_dataset: cannot open " + path.string());
  std::string line;
  std::size_t row = 0;
  std::size_t width = 0;
  std::vector<double> features;
  std::vector<int> labels;
  std::size_t line_no = 0;
  if (options.header) {
    std::getline(in, line);
    ++line_no;
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_commas(line);
    if (row == 0) {
      width = cells.size();
      if (width < (options.has_labels ? 2u : 1u)) {
        throw Error(fmt::format("load_csv_dataset: row {} (line {}) has too few columns", row, line_no));
      }
    } else if (cells.size() != width) {
      throw Error(fmt::format("load_csv_dataset: ragged row {} (line {}): {} columns, expected {}", row, line_no,
                              cells.size(), width));
    }
    const std::size_t m = options.has_labels ? width - 1 : width;
    for (std::size_t c = 0; c < m; ++c) {
      const std::string cell = trim(cells[c]);
      char* end = nullptr;
      errno = 0;
      const double v = std::strtod(cell.c_str(), &end);
      if (cell.empty() || end != cell.c_str() + cell.size() || errno == ERANGE || !std::isfinite(v)) {
        throw Error(fmt::format("load_csv_dataset: non-numeric cell '{}' at row {} (line {}), column {}", cell, row,
                                line_no, c));
      }
      features.push_back(v);
    }
    if (options.has_labels) {
      const std::string cell = trim(cells.back());
      char* end = nullptr;
      const long v = std::strtol(cell.c_str(), &end, 10);
      if (cell.empty() || end != cell.c_str() + cell.size()) {
        throw Error(fmt::format("load_csv_dataset: non-integer label '{}' at row {} (line {})", cell, row, line_no));
      }
      if (v < 0) throw Error(fmt::format("load_csv_dataset: negative label {} at row {} (line {})", v, row, line_no));
      labels.push_back(static_cast<int>(v));
    }
    ++row;
  }
  if (row == 0) throw Error("load_csv_dataset: no data rows in " + path.string());

  DomainDataset ds;
  const std::size_t m = options.has_labels ? width - 1 : width;
  ds.features = Tensor({row, m}, std::move(features));
  if (options.has_labels) {
    ds.num_classes = static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
    ds.labels = std::move(labels);
  }
  ds.domain_tag = path.stem().string();
  return ds;
}

void write_csv_dataset(const std::filesystem::path& path, const DomainDataset& ds) {
  std::ofstream out(path);
  if (!out) throw Error("write_csv_dataset: cannot open " + path.string());
  const auto x = ds.features.data();
  const std::size_t m = ds.dim();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t d = 0; d < m; ++d) out << (d ? "," : "") << fmt::format("{:.17g}", x[i * m + d]);
    if (ds.labels) out << ',' << (*ds.labels)[i];
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Sampling

UnpairedBatchSampler::UnpairedBatchSampler(const DomainDataset& source, const UnlabeledDataset& target,
                                           std::size_t source_batch, std::size_t target_batch)
    : source_(&source), target_(&target), b_s_(source_batch), b_t_(target_batch) {
  if (!source.labeled()) throw Error("sampler: source dataset must be labeled");
  if (b_s_ == 0 || b_t_ == 0) throw Error("sampler: batch sizes must be positive");
  if (b_s_ > source.size()) {
    throw Error(fmt::format("sampler: source batch {} exceeds dataset size {}", b_s_, source.size()));
  }
  if (b_t_ > target.size()) {
    throw Error(fmt::format("sampler: target batch {} exceeds dataset size {}", b_t_, target.size()));
  }
  pairs_ = std::max(source.size() / b_s_, target.size() / b_t_);
}

namespace {

// Yields consecutive index batches from repeated independent shuffles.
class CyclingShuffle {
 public:
  CyclingShuffle(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) { reshuffle(); }

  std::vector<std::size_t> next(std::size_t batch) {
    if (cursor_ + batch > order_.size()) reshuffle();
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch));
    cursor_ += batch;
    return out;
  }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }

  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  std::size_t cursor_ = 0;
};

}  // namespace

std::vector<BatchPair> UnpairedBatchSampler::epoch(std::uint64_t epoch_seed) const {
  CyclingShuffle src(source_->size(), derive_seed(epoch_seed, 1));
  CyclingShuffle tgt(target_->size(), derive_seed(epoch_seed, 2));
  std::vector<BatchPair> out;
  out.reserve(pairs_);
  for (std::size_t b = 0; b < pairs_; ++b) {
    BatchPair pair;
    pair.source.indices = src.next(b_s_);
    pair.source.features = gather_rows(source_->features, pair.source.indices);
    pair.source.labels.reserve(b_s_);
    for (auto i : pair.source.indices) pair.source.labels.push_back((*source_->labels)[i]);
    pair.target.indices = tgt.next(b_t_);
    pair.target.features = gather_rows(target_->features(), pair.target.indices);
    out.push_back(std::move(pair));
  }
  return out;
}

std::vector<SourceBatch> labeled_batches(const DomainDataset& ds, std::size_t batch_size, std::uint64_t seed) {
  if (!ds.labeled()) throw Error("labeled_batches: dataset has no labels");
  if (batch_size == 0) throw Error("labeled_batches: batch size must be positive");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<SourceBatch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t stop = std::min(order.size(), start + batch_size);
    SourceBatch batch;
    batch.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(stop));
    batch.features = gather_rows(ds.features, batch.indices);
    for (auto i : batch.indices) batch.labels.push_back((*ds.labels)[i]);
    out.push_back(std::move(batch));
  }
  return out;
}

DomainDataset materialize(const DatasetSpec& spec, std::uint64_t seed_offset, const std::string& tag) {
  DomainDataset ds = std::visit(
      [&](const auto& s) -> DomainDataset {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, TwoMoonsSpec>) {
          ShiftSpec shift = s.shift;
          shift.seed += seed_offset;
          return make_two_moons(s.n, s.noise_sigma, shift);
        } else if constexpr (std::is_same_v<T, BlobsSpec>) {
          ShiftSpec shift = s.shift;
          shift.seed += seed_offset;
          return make_blobs(s.n, s.num_classes, s.dim, s.centers_seed, shift);
        } else {
          return load_csv_dataset(s.path, s.options);
        }
      },
      spec);
  ds.domain_tag = tag;
  ds.validate();
  return ds;
}

}  // namespace prl
