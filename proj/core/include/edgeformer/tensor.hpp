#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "edgeformer/errors.hpp"
#include "edgeformer/rng.hpp"

namespace edgeformer {

class Tape;

namespace detail {

struct TensorImpl {
  std::vector<size_t> shape;  // rank 1 or 2
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  Tape* tape = nullptr;  // tape that recorded the producing op, if any

  size_t numel() const {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
  }
  void ensure_grad() {
    if (grad.empty()) grad.assign(numel(), 0.0);
  }
};

}  // namespace detail

// Value-semantic handle; copies share storage. Data is written only at
// construction time and by the optimizer between tapes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<size_t> shape);
  static Tensor full(std::vector<size_t> shape, double value);
  static Tensor from(std::vector<double> values, std::vector<size_t> shape);
  static Tensor scalar(double value) { return from({value}, {1}); }
  // Normal(0, stddev) entries.
  static Tensor randn(std::vector<size_t> shape, Rng& rng, double stddev);

  bool defined() const { return impl_ != nullptr; }
  size_t rank() const { return impl_->shape.size(); }
  const std::vector<size_t>& shape() const { return impl_->shape; }
  size_t numel() const { return impl_->numel(); }
  // Row/col view of a rank-1 tensor is 1 x n.
  size_t rows() const { return rank() == 2 ? impl_->shape[0] : 1; }
  size_t cols() const { return rank() == 2 ? impl_->shape[1] : impl_->shape[0]; }

  const double* data() const { return impl_->data.data(); }
  double* mut_data() { return impl_->data.data(); }
  double at(size_t i) const { return impl_->data[i]; }
  double at(size_t i, size_t j) const { return impl_->data[i * cols() + j]; }
  // Scalar extraction; requires numel() == 1.
  double value() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }
  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<double>& grad() const { return impl_->grad; }
  void clear_grad() { impl_->grad.clear(); }

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend Tensor make_op_output(std::vector<size_t> shape);
};

// Records ops while active (via TapeScope) and replays them in reverse.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Seeds d(loss)/d(loss) = 1 and propagates to every recorded input.
  // loss must be scalar and produced on this tape; a tape backpropagates
  // once unless reset() is called.
  void backward(const Tensor& loss);

  // Forgets recorded entries and allows the tape to be reused.
  void reset() {
    entries_.clear();
    consumed_ = false;
  }

  size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

  static Tape* active();

 private:
  struct Entry {
    std::shared_ptr<detail::TensorImpl> out;
    std::function<void()> pull;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;

  friend class TapeScope;
  friend void record_op(Tensor& out, std::function<void()> pull);
};

// Activates a tape on the current thread for its lifetime. Scopes nest.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// Backpropagates through the tape that produced loss. AutogradError if loss
// was never recorded.
void backward(const Tensor& loss);

// Elementwise; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

// (m, k) x (k, n) -> (m, n).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Rank-2 inputs with equal column counts, stacked top to bottom.
Tensor concat_rows(const std::vector<Tensor>& parts);
// Rows [start, start + len) of a rank-2 tensor.
Tensor slice_rows(const Tensor& a, size_t start, size_t len);
// Rank-2 inputs with equal row counts, joined left to right.
Tensor concat_cols(const std::vector<Tensor>& parts);

Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);

// x: (n, in), w: (in, out), b: (out). Row-wise affine map.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// table: (V, d); out row r copies table row ids[r]. Gradient scatter-adds.
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);

// Row-wise softmax over positions where mask is true; masked outputs are
// exactly zero. mask has one flag per element. A row with no true flag is a
// ValueError.
Tensor softmax_masked(const Tensor& x, const std::vector<uint8_t>& mask);

// Row-wise normalization with learned gain/bias (rank-1, length = cols).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// Sum of all elements; returns a scalar.
Tensor sum(const Tensor& a);

// Per-row negative log softmax probability of the labelled column:
// out[i] = logsumexp(row i) - x[i, labels[i]]. Returns shape (n).
Tensor cross_entropy_terms(const Tensor& logits, const std::vector<int>& labels);

// Per-element binary cross entropy on logits against targets in [0, 1],
// computed as max(x, 0) - x*y + log1p(exp(-|x|)).
Tensor bce_with_logits_terms(const Tensor& logits, const Tensor& targets);

// Inverted-dropout: keeps with probability 1 - rate, scales kept values by
// 1 / (1 - rate). rate 0 returns the input unchanged.
Tensor dropout(const Tensor& a, double rate, Rng& rng);

bool all_finite(const Tensor& a);

std::string shape_str(const std::vector<size_t>& shape);

}  // namespace edgeformer
