// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors of doubles with tape-based reverse-mode
// differentiation. A Tape records every op whose inputs require gradients
// while it is the active tape on the calling thread; backward() then walks
// the recorded nodes once, in reverse insertion order.

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace prl {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

enum class OpKind {
  matmul,
  add,
  add_broadcast_row,
  scale,
  neg,
  exp,
  relu,
  abs,
  square,
  reduce_mean,
  reduce_sum,
  concat_rows,
  pairwise_sq_dists,
  softmax_cross_entropy,
};

std::string_view op_name(OpKind op);

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an op receives operands whose shapes do not conform.
class ShapeError : public Error {
 public:
  ShapeError(OpKind op, std::vector<Shape> shapes, const std::string& detail = {});
  OpKind op() const noexcept { return op_; }
  const std::vector<Shape>& shapes() const noexcept { return shapes_; }

 private:
  OpKind op_;
  std::vector<Shape> shapes_;
};

/// Raised when an op is fed (or would produce) NaN or Inf.
class NonFiniteError : public Error {
 public:
  NonFiniteError(OpKind op, std::size_t operand);
  OpKind op() const noexcept { return op_; }
  std::size_t operand() const noexcept { return operand_; }

 private:
  OpKind op_;
  std::size_t operand_;
};

class AutodiffError : public Error {
 public:
  using Error::Error;
};

namespace detail {
struct TensorImpl;
}

class Tape;

/// Shared handle to a dense tensor. Copies alias the same storage, which is
/// what parameter tensors need: the optimizer updates the leaf that the
/// graph accumulated gradients into.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  /// Writable view of a leaf's storage. Tape-produced tensors are read-only.
  std::span<double> mutable_data();
  double item() const;
  double operator()(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad();

  /// Deep copy with no tape linkage and requires_grad = false.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<detail::TensorImpl> impl_;

  friend class Tape;
  friend struct OpAccess;
};

/// Append-only record of differentiable ops. Constructing a Tape makes it
/// the active tape of the current thread; destruction restores the previous
/// one. A tape supports exactly one backward pass.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t id() const noexcept { return id_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  /// Accumulates d(output)/d(leaf) into the grad of every reachable leaf
  /// that requires grad. output must be a scalar recorded on this tape.
  void backward(const Tensor& output);

  static Tape* active() noexcept;

  struct Node {
    OpKind op;
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    double scalar = 0.0;
    std::vector<double> saved;
    std::vector<std::size_t> labels;
  };

  void record(Node node);

 private:
  std::uint64_t id_;
  Tape* previous_;
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

/// Runs backward on the active tape.
void backward(const Tensor& output);

// Primitives. Every op checks shapes and finiteness of its inputs.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
/// x (n x c) plus a row vector (1 x c or c) added to every row.
Tensor add_broadcast_row(const Tensor& x, const Tensor& row);
Tensor scale(const Tensor& x, double factor);
Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor relu(const Tensor& x);
/// Subgradient at 0 is 0.
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor reduce_mean(const Tensor& x);
Tensor reduce_sum(const Tensor& x);
Tensor concat_rows(const Tensor& top, const Tensor& bottom);
/// (n x d, m x d) -> n x m squared Euclidean distances, computed as
/// |a|^2 + |b|^2 - 2 a.b with negatives clamped to 0.
Tensor pairwise_sq_dists(const Tensor& a, const Tensor& b);
/// Mean over rows of -log softmax(logits)[label]. Fused so the max-shift
/// stabilization stays inside one node.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double factor, const Tensor& x);

}  // namespace prl
