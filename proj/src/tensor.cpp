// SPDX-License-Identifier: Apache-2.0

#include "prl/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace prl {

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t tape_id = 0;  // 0: leaf / constant
  std::size_t node = 0;
};

}  // namespace detail

using detail::TensorImpl;

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::string_view op_name(OpKind op) {
  switch (op) {
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::add_broadcast_row: return "add_broadcast_row";
    case OpKind::scale: return "scale";
    case OpKind::neg: return "neg";
    case OpKind::exp: return "exp";
    case OpKind::relu: return "relu";
    case OpKind::abs: return "abs";
    case OpKind::square: return "square";
    case OpKind::reduce_mean: return "reduce_mean";
    case OpKind::reduce_sum: return "reduce_sum";
    case OpKind::concat_rows: return "concat_rows";
    case OpKind::pairwise_sq_dists: return "pairwise_sq_dists";
    case OpKind::softmax_cross_entropy: return "softmax_cross_entropy";
  }
  return "unknown";
}

namespace {

std::string shape_message(OpKind op, const std::vector<Shape>& shapes, const std::string& detail) {
  std::ostringstream os;
  os << op_name(op) << ": shape mismatch";
  for (std::size_t i = 0; i < shapes.size(); ++i) os << (i ? ", " : " ") << to_string(shapes[i]);
  if (!detail.empty()) os << " (" << detail << ')';
  return os.str();
}

}  // namespace

ShapeError::ShapeError(OpKind op, std::vector<Shape> shapes, const std::string& detail)
    : Error(shape_message(op, shapes, detail)), op_(op), shapes_(std::move(shapes)) {}

NonFiniteError::NonFiniteError(OpKind op, std::size_t operand)
    : Error(std::string(op_name(op)) + ": non-finite value in operand " + std::to_string(operand)),
      op_(op),
      operand_(operand) {}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (element_count(shape) != data.size()) {
    throw Error("Tensor: shape " + to_string(shape) + " holds " +
                std::to_string(element_count(shape)) + " elements, got " + std::to_string(data.size()));
  }
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = element_count(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw Error("Tensor::matrix: ragged initializer");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor({rows, cols}, std::move(data));
}

namespace {
const TensorImpl& checked(const std::shared_ptr<TensorImpl>& impl) {
  if (!impl) throw Error("use of undefined Tensor");
  return *impl;
}
}  // namespace

const Shape& Tensor::shape() const { return checked(impl_).shape; }
std::size_t Tensor::size() const { return checked(impl_).data.size(); }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  if (s.size() != 2) throw Error("rows(): tensor of shape " + to_string(s) + " is not a matrix");
  return s[0];
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  if (s.size() != 2) throw Error("cols(): tensor of shape " + to_string(s) + " is not a matrix");
  return s[1];
}

std::span<const double> Tensor::data() const { return checked(impl_).data; }

std::span<double> Tensor::mutable_data() {
  checked(impl_);
  if (impl_->tape_id != 0) throw Error("mutable_data(): tensor was produced by a recorded op");
  return impl_->data;
}

double Tensor::item() const {
  const auto& d = checked(impl_).data;
  if (d.size() != 1) throw Error("item(): tensor of shape " + to_string(impl_->shape) + " is not a scalar");
  return d[0];
}

double Tensor::operator()(std::size_t row, std::size_t col) const { return data()[row * cols() + col]; }

bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }

void Tensor::set_requires_grad(bool value) {
  checked(impl_);
  if (impl_->tape_id != 0) throw Error("set_requires_grad(): only leaves can change requires_grad");
  impl_->requires_grad = value;
}

bool Tensor::is_leaf() const { return checked(impl_).tape_id == 0; }
bool Tensor::has_grad() const { return !checked(impl_).grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw AutodiffError("grad(): tensor has no gradient");
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!has_grad()) throw AutodiffError("grad(): tensor has no gradient");
  return impl_->grad;
}

void Tensor::zero_grad() {
  checked(impl_);
  impl_->grad.assign(impl_->data.size(), 0.0);
}

void Tensor::clear_grad() {
  checked(impl_);
  impl_->grad.clear();
  impl_->grad.shrink_to_fit();
}

Tensor Tensor::detach() const {
  const auto& src = checked(impl_);
  return Tensor(src.shape, src.data, false);
}

// ---------------------------------------------------------------------------
// Tape

namespace {
thread_local Tape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_next_tape_id{1};
}  // namespace

Tape::Tape() : id_(g_next_tape_id.fetch_add(1)), previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() {
  if (g_active_tape == this) g_active_tape = previous_;
}

Tape* Tape::active() noexcept { return g_active_tape; }

void Tape::record(Node node) {
  if (consumed_) throw AutodiffError("tape already consumed by backward(); start a new forward pass");
  node.output->tape_id = id_;
  node.output->node = nodes_.size();
  nodes_.push_back(std::move(node));
}

void backward(const Tensor& output) {
  Tape* tape = Tape::active();
  if (!tape) throw AutodiffError("backward(): no active tape");
  tape->backward(output);
}

struct OpAccess {
  static const std::shared_ptr<TensorImpl>& impl(const Tensor& t) {
    if (!t.impl_) throw Error("use of undefined Tensor");
    return t.impl_;
  }
  static Tensor wrap(std::shared_ptr<TensorImpl> impl) { return Tensor(std::move(impl)); }
};

namespace {

std::vector<double>& grad_buffer(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
  return t.grad;
}

// C += A * B^T, where A is n x k, B is m x k and C is n x m (all row-major)
void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m);

// C += A * B^T, A n x k, B m x k. B is transposed once so the inner loop
// runs over contiguous rows.
void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  std::vector<double> bt(k * m);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * m + j] = b[j * k + p];
  gemm_nn(a, bt.data(), c, n, k, m);
}

// C += A * B, A n x k, B k x m
void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * m;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const double a0 = arow[p], a1 = arow[p + 1], a2 = arow[p + 2], a3 = arow[p + 3];
      const double* b0 = b + p * m;
      const double* b1 = b0 + m;
      const double* b2 = b1 + m;
      const double* b3 = b2 + m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
    }
    for (; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A^T * B, A k x n, B k x m, C n x m
void gemm_tn(const double* a, const double* b, double* c, std::size_t k, std::size_t n, std::size_t m) {
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t i = 0; i < n; ++i) {
      const double av = a[p * n + i];
      if (av == 0.0) continue;
      const double* brow = b + p * m;
      double* crow = c + i * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

void Tape::backward(const Tensor& output) {
  if (consumed_) throw AutodiffError("backward(): called twice without re-running forward");
  const auto& out = OpAccess::impl(output);
  if (out->data.size() != 1) {
    throw AutodiffError("backward(): output must be scalar, got shape " + to_string(out->shape));
  }
  if (out->tape_id != id_) throw AutodiffError("backward(): output was not recorded on this tape");
  consumed_ = true;

  grad_buffer(*out)[0] += 1.0;

  for (std::size_t idx = out->node + 1; idx-- > 0;) {
    Node& node = nodes_[idx];
    TensorImpl& y = *node.output;
    if (y.grad.empty()) continue;
    const std::vector<double>& gy = y.grad;
    auto wants = [&](std::size_t i) { return node.inputs[i]->requires_grad; };

    switch (node.op) {
      case OpKind::matmul: {
        TensorImpl& a = *node.inputs[0];
        TensorImpl& b = *node.inputs[1];
        const std::size_t n = a.shape[0], k = a.shape[1], m = b.shape[1];
        if (wants(0)) gemm_nt(gy.data(), b.data.data(), grad_buffer(a).data(), n, m, k);
        if (wants(1)) gemm_tn(a.data.data(), gy.data(), grad_buffer(b).data(), n, k, m);
        break;
      }
      case OpKind::add: {
        for (std::size_t i = 0; i < 2; ++i) {
          if (!wants(i)) continue;
          auto& g = grad_buffer(*node.inputs[i]);
          for (std::size_t j = 0; j < g.size(); ++j) g[j] += gy[j];
        }
        break;
      }
      case OpKind::add_broadcast_row: {
        if (wants(0)) {
          auto& g = grad_buffer(*node.inputs[0]);
          for (std::size_t j = 0; j < g.size(); ++j) g[j] += gy[j];
        }
        if (wants(1)) {
          auto& g = grad_buffer(*node.inputs[1]);
          const std::size_t c = g.size();
          for (std::size_t j = 0; j < gy.size(); ++j) g[j % c] += gy[j];
        }
        break;
      }
      case OpKind::scale:
      case OpKind::neg: {
        if (!wants(0)) break;
        const double f = node.op == OpKind::neg ? -1.0 : node.scalar;
        auto& g = grad_buffer(*node.inputs[0]);
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += f * gy[j];
        break;
      }
      case OpKind::exp: {
        if (!wants(0)) break;
        auto& g = grad_buffer(*node.inputs[0]);
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += gy[j] * y.data[j];
        break;
      }
      case OpKind::relu: {
        if (!wants(0)) break;
        const auto& x = node.inputs[0]->data;
        auto& g = grad_buffer(*node.inputs[0]);
        for (std::size_t j = 0; j < g.size(); ++j)
          if (x[j] > 0.0) g[j] += gy[j];
        break;
      }
      case OpKind::abs: {
        if (!wants(0)) break;
        const auto& x = node.inputs[0]->data;
        auto& g = grad_buffer(*node.inputs[0]);
        for (std::size_t j = 0; j < g.size(); ++j) {
          if (x[j] > 0.0) g[j] += gy[j];
          else if (x[j] < 0.0) g[j] -= gy[j];
        }
        break;
      }
      case OpKind::square: {
        if (!wants(0)) break;
        const auto& x = node.inputs[0]->data;
        auto& g = grad_buffer(*node.inputs[0]);
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += 2.0 * x[j] * gy[j];
        break;
      }
      case OpKind::reduce_sum:
      case OpKind::reduce_mean: {
        if (!wants(0)) break;
        auto& g = grad_buffer(*node.inputs[0]);
        const double f = node.op == OpKind::reduce_mean ? gy[0] / static_cast<double>(g.size()) : gy[0];
        for (double& v : g) v += f;
        break;
      }
      case OpKind::concat_rows: {
        const std::size_t split = node.inputs[0]->data.size();
        if (wants(0)) {
          auto& g = grad_buffer(*node.inputs[0]);
          for (std::size_t j = 0; j < split; ++j) g[j] += gy[j];
        }
        if (wants(1)) {
          auto& g = grad_buffer(*node.inputs[1]);
          for (std::size_t j = 0; j < g.size(); ++j) g[j] += gy[split + j];
        }
        break;
      }
      case OpKind::pairwise_sq_dists: {
        // saved holds 1.0 where the distance was clamped to 0
        TensorImpl& a = *node.inputs[0];
        TensorImpl& b = *node.inputs[1];
        const std::size_t n = a.shape[0], m = b.shape[0], d = a.shape[1];
        std::vector<double> gm(gy.begin(), gy.end());
        for (std::size_t j = 0; j < gm.size(); ++j)
          if (node.saved[j] != 0.0) gm[j] = 0.0;
        if (wants(0)) {
          auto& ga = grad_buffer(a);
          for (std::size_t i = 0; i < n; ++i) {
            double rowsum = 0.0;
            for (std::size_t j = 0; j < m; ++j) rowsum += gm[i * m + j];
            for (std::size_t p = 0; p < d; ++p) ga[i * d + p] += 2.0 * rowsum * a.data[i * d + p];
          }
          // ga -= 2 G B
          std::vector<double> tmp(n * d, 0.0);
          gemm_nn(gm.data(), b.data.data(), tmp.data(), n, m, d);
          for (std::size_t j = 0; j < tmp.size(); ++j) ga[j] -= 2.0 * tmp[j];
        }
        if (wants(1)) {
          auto& gb = grad_buffer(b);
          for (std::size_t j = 0; j < m; ++j) {
            double colsum = 0.0;
            for (std::size_t i = 0; i < n; ++i) colsum += gm[i * m + j];
            for (std::size_t p = 0; p < d; ++p) gb[j * d + p] += 2.0 * colsum * b.data[j * d + p];
          }
          // gb -= 2 G^T A
          std::vector<double> tmp(m * d, 0.0);
          gemm_tn(gm.data(), a.data.data(), tmp.data(), n, m, d);
          for (std::size_t j = 0; j < tmp.size(); ++j) gb[j] -= 2.0 * tmp[j];
        }
        break;
      }
      case OpKind::softmax_cross_entropy: {
        // saved holds the softmax probabilities
        if (!wants(0)) break;
        TensorImpl& z = *node.inputs[0];
        const std::size_t n = z.shape[0], k = z.shape[1];
        auto& g = grad_buffer(z);
        const double f = gy[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t c = 0; c < k; ++c) {
            const double onehot = c == node.labels[i] ? 1.0 : 0.0;
            g[i * k + c] += f * (node.saved[i * k + c] - onehot);
          }
        }
        break;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Primitives

namespace {

void require_finite(OpKind op, const TensorImpl& t, std::size_t operand) {
  for (double v : t.data)
    if (!std::isfinite(v)) throw NonFiniteError(op, operand);
}

bool is_matrix(const TensorImpl& t) { return t.shape.size() == 2; }

// Builds the result and records it when a tape is active and any input requires grad.
Tensor emit(Tape::Node node, Shape shape, std::vector<double> data) {
  auto out = std::make_shared<TensorImpl>();
  out->shape = std::move(shape);
  out->data = std::move(data);
  for (double v : out->data)
    if (!std::isfinite(v)) throw NonFiniteError(node.op, node.inputs.size());
  Tape* tape = Tape::active();
  const bool track = tape && std::any_of(node.inputs.begin(), node.inputs.end(),
                                         [](const auto& in) { return in->requires_grad; });
  if (track) {
    out->requires_grad = true;
    node.output = out;
    tape->record(std::move(node));
  }
  return OpAccess::wrap(std::move(out));
}

Tape::Node make_node(OpKind op, std::initializer_list<const Tensor*> inputs) {
  Tape::Node node;
  node.op = op;
  std::size_t idx = 0;
  for (const Tensor* t : inputs) {
    const auto& impl = OpAccess::impl(*t);
    require_finite(op, *impl, idx++);
    node.inputs.push_back(impl);
  }
  return node;
}

Tensor unary(OpKind op, const Tensor& x, double (*fn)(double)) {
  auto node = make_node(op, {&x});
  const auto& in = *node.inputs[0];
  std::vector<double> out(in.data.size());
  std::transform(in.data.begin(), in.data.end(), out.begin(), fn);
  Shape shape = in.shape;
  return emit(std::move(node), std::move(shape), std::move(out));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  auto node = make_node(OpKind::matmul, {&a, &b});
  const auto& x = *node.inputs[0];
  const auto& y = *node.inputs[1];
  if (!is_matrix(x) || !is_matrix(y) || x.shape[1] != y.shape[0]) {
    throw ShapeError(OpKind::matmul, {x.shape, y.shape});
  }
  const std::size_t n = x.shape[0], k = x.shape[1], m = y.shape[1];
  std::vector<double> out(n * m, 0.0);
  gemm_nn(x.data.data(), y.data.data(), out.data(), n, k, m);
  return emit(std::move(node), {n, m}, std::move(out));
}

Tensor add(const Tensor& a, const Tensor& b) {
  auto node = make_node(OpKind::add, {&a, &b});
  const auto& x = *node.inputs[0];
  const auto& y = *node.inputs[1];
  if (x.shape != y.shape) throw ShapeError(OpKind::add, {x.shape, y.shape});
  std::vector<double> out(x.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data[i] + y.data[i];
  Shape shape = x.shape;
  return emit(std::move(node), std::move(shape), std::move(out));
}

Tensor add_broadcast_row(const Tensor& x, const Tensor& row) {
  auto node = make_node(OpKind::add_broadcast_row, {&x, &row});
  const auto& m = *node.inputs[0];
  const auto& r = *node.inputs[1];
  const bool row_ok = (r.shape.size() == 1) || (r.shape.size() == 2 && r.shape[0] == 1);
  if (!is_matrix(m) || !row_ok || r.data.size() != m.shape[1]) {
    throw ShapeError(OpKind::add_broadcast_row, {m.shape, r.shape});
  }
  const std::size_t c = m.shape[1];
  std::vector<double> out(m.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = m.data[i] + r.data[i % c];
  Shape shape = m.shape;
  return emit(std::move(node), std::move(shape), std::move(out));
}

Tensor scale(const Tensor& x, double factor) {
  if (!std::isfinite(factor)) throw NonFiniteError(OpKind::scale, 1);
  auto node = make_node(OpKind::scale, {&x});
  node.scalar = factor;
  const auto& in = *node.inputs[0];
  std::vector<double> out(in.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * in.data[i];
  Shape shape = in.shape;
  return emit(std::move(node), std::move(shape), std::move(out));
}

Tensor neg(const Tensor& x) {
  return unary(OpKind::neg, x, [](double v) { return -v; });
}
Tensor exp(const Tensor& x) {
  return unary(OpKind::exp, x, [](double v) { return std::exp(v); });
}
Tensor relu(const Tensor& x) {
  return unary(OpKind::relu, x, [](double v) { return v > 0.0 ? v : 0.0; });
}
Tensor abs(const Tensor& x) {
  return unary(OpKind::abs, x, [](double v) { return std::fabs(v); });
}
Tensor square(const Tensor& x) {
  return unary(OpKind::square, x, [](double v) { return v * v; });
}

Tensor reduce_sum(const Tensor& x) {
  auto node = make_node(OpKind::reduce_sum, {&x});
  const auto& in = node.inputs[0]->data;
  const double s = std::accumulate(in.begin(), in.end(), 0.0);
  return emit(std::move(node), {1}, {s});
}

Tensor reduce_mean(const Tensor& x) {
  auto node = make_node(OpKind::reduce_mean, {&x});
  const auto& in = *node.inputs[0];
  if (in.data.empty()) throw ShapeError(OpKind::reduce_mean, {in.shape}, "mean of empty tensor");
  const double s = std::accumulate(in.data.begin(), in.data.end(), 0.0) / static_cast<double>(in.data.size());
  return emit(std::move(node), {1}, {s});
}

Tensor concat_rows(const Tensor& top, const Tensor& bottom) {
  auto node = make_node(OpKind::concat_rows, {&top, &bottom});
  const auto& a = *node.inputs[0];
  const auto& b = *node.inputs[1];
  if (!is_matrix(a) || !is_matrix(b) || a.shape[1] != b.shape[1]) {
    throw ShapeError(OpKind::concat_rows, {a.shape, b.shape});
  }
  std::vector<double> out(a.data);
  out.insert(out.end(), b.data.begin(), b.data.end());
  return emit(std::move(node), {a.shape[0] + b.shape[0], a.shape[1]}, std::move(out));
}

Tensor pairwise_sq_dists(const Tensor& a, const Tensor& b) {
  auto node = make_node(OpKind::pairwise_sq_dists, {&a, &b});
  const auto& x = *node.inputs[0];
  const auto& y = *node.inputs[1];
  if (!is_matrix(x) || !is_matrix(y) || x.shape[1] != y.shape[1]) {
    throw ShapeError(OpKind::pairwise_sq_dists, {x.shape, y.shape});
  }
  const std::size_t n = x.shape[0], m = y.shape[0], d = x.shape[1];
  std::vector<double> xn(n, 0.0), yn(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < d; ++p) xn[i] += x.data[i * d + p] * x.data[i * d + p];
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t p = 0; p < d; ++p) yn[j] += y.data[j * d + p] * y.data[j * d + p];

  std::vector<double> out(n * m, 0.0);
  gemm_nt(x.data.data(), y.data.data(), out.data(), n, d, m);
  std::vector<double> clamped(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double v = xn[i] + yn[j] - 2.0 * out[i * m + j];
      if (v < 0.0) {
        v = 0.0;
        clamped[i * m + j] = 1.0;
      }
      out[i * m + j] = v;
    }
  }
  node.saved = std::move(clamped);
  return emit(std::move(node), {n, m}, std::move(out));
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  auto node = make_node(OpKind::softmax_cross_entropy, {&logits});
  const auto& z = *node.inputs[0];
  if (!is_matrix(z) || z.shape[0] != labels.size()) {
    throw ShapeError(OpKind::softmax_cross_entropy, {z.shape, Shape{labels.size()}});
  }
  const std::size_t n = z.shape[0], k = z.shape[1];
  if (n == 0) throw ShapeError(OpKind::softmax_cross_entropy, {z.shape}, "empty batch");
  node.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw Error("softmax_cross_entropy: label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                  " outside [0, " + std::to_string(k) + ")");
    }
    node.labels[i] = static_cast<std::size_t>(labels[i]);
  }
  std::vector<double> probs(n * k);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = z.data.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double denom = 0.0;
    for (std::size_t c = 0; c < k; ++c) denom += std::exp(row[c] - mx);
    for (std::size_t c = 0; c < k; ++c) probs[i * k + c] = std::exp(row[c] - mx) / denom;
    total += std::log(denom) + mx - row[node.labels[i]];
  }
  node.saved = std::move(probs);
  return emit(std::move(node), {1}, {total / static_cast<double>(n)});
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }
Tensor operator*(double factor, const Tensor& x) { return scale(x, factor); }

}  // namespace prl
