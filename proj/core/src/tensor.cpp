#include "edgeformer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <utility>

namespace edgeformer {

namespace {

thread_local Tape* g_active_tape = nullptr;

constexpr double kSqrt2 = 1.4142135623730950488;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void check(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

}  // namespace

std::string shape_str(const std::vector<size_t>& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

Tensor make_op_output(std::vector<size_t> shape) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data.assign(impl->numel(), 0.0);
  return Tensor(std::move(impl));
}

// Registers the entry if a tape is active and any input carries grad.
void record_op(Tensor& out, std::function<void()> pull) {
  Tape* tape = Tape::active();
  if (tape == nullptr) return;
  out.impl()->requires_grad = true;
  out.impl()->tape = tape;
  tape->entries_.push_back({out.impl(), std::move(pull)});
}

namespace {

bool want_grad(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

}  // namespace

Tensor Tensor::zeros(std::vector<size_t> shape) {
  return make_op_output(std::move(shape));
}

Tensor Tensor::full(std::vector<size_t> shape, double value) {
  Tensor t = make_op_output(std::move(shape));
  std::fill(t.impl()->data.begin(), t.impl()->data.end(), value);
  return t;
}

Tensor Tensor::from(std::vector<double> values, std::vector<size_t> shape) {
  Tensor t = make_op_output(std::move(shape));
  if (values.size() != t.numel()) {
    throw ShapeError("from: " + std::to_string(values.size()) +
                     " values for shape " + shape_str(t.shape()));
  }
  t.impl()->data = std::move(values);
  return t;
}

Tensor Tensor::randn(std::vector<size_t> shape, Rng& rng, double stddev) {
  Tensor t = make_op_output(std::move(shape));
  for (double& x : t.impl()->data) x = rng.normal() * stddev;
  return t;
}

double Tensor::value() const {
  if (numel() != 1) {
    throw ShapeError("value() requires a scalar, got " + shape_str(shape()));
  }
  return impl_->data[0];
}

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = prev_; }

void Tape::backward(const Tensor& loss) {
  if (consumed_) {
    throw AutogradError("tape already backpropagated; call reset() before reuse");
  }
  if (!loss.defined() || loss.impl()->tape != this) {
    throw AutogradError("loss was not recorded on this tape");
  }
  if (loss.numel() != 1) {
    throw AutogradError("backward requires a scalar loss, got " +
                        shape_str(loss.shape()));
  }
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->out->grad.empty()) it->pull();
  }
  consumed_ = true;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.impl()->tape == nullptr) {
    throw AutogradError("backward on a detached tensor: no tape recorded it");
  }
  loss.impl()->tape->backward(loss);
}

namespace {

using Impl = std::shared_ptr<detail::TensorImpl>;

// out[m,n] += a[m,k] * b[k,n], raw row-major buffers.
void mm_acc(const double* a, const double* b, double* out, size_t m, size_t k,
            size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* orow = out + i * n;
    for (size_t p = 0; p < k; ++p) {
      double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out[k,n] += a^T[k,m] * b[m,n] where a is [m,k].
void mm_at_b_acc(const double* a, const double* b, double* out, size_t m,
                 size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (size_t p = 0; p < k; ++p) {
      double av = arow[p];
      if (av == 0.0) continue;
      double* orow = out + p * n;
      for (size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out[m,k] += a[m,n] * b^T[n,k] where b is [k,n].
void mm_a_bt_acc(const double* a, const double* b, double* out, size_t m,
                 size_t n, size_t k) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    double* orow = out + i * k;
    for (size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      orow[p] += acc;
    }
  }
}

Tensor elementwise_binary(const Tensor& a, const Tensor& b, const char* name,
                          double (*fwd)(double, double),
                          void (*bwd)(double, double, double, double&, double&)) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(name) + ": shapes disagree: " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out = make_op_output(a.shape());
  size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) {
    out.impl()->data[i] = fwd(a.at(i), b.at(i));
  }
  if (want_grad({&a, &b})) {
    Impl ai = a.impl(), bi = b.impl(), oi = out.impl();
    bool ga = a.requires_grad(), gb = b.requires_grad();
    record_op(out, [ai, bi, oi, ga, gb, bwd, n]() {
      if (ga) ai->ensure_grad();
      if (gb) bi->ensure_grad();
      double dead = 0.0;
      for (size_t i = 0; i < n; ++i) {
        bwd(ai->data[i], bi->data[i], oi->grad[i],
            ga ? ai->grad[i] : dead, gb ? bi->grad[i] : dead);
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double g, double& da, double& db) {
        da += g;
        db += g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double g, double& da, double& db) {
        da += g;
        db -= g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& da, double& db) {
        da += g * y;
        db += g * x;
      });
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = make_op_output(a.shape());
  size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) out.impl()->data[i] = a.at(i) * c;
  if (want_grad({&a})) {
    Impl ai = a.impl(), oi = out.impl();
    record_op(out, [ai, oi, c, n]() {
      ai->ensure_grad();
      for (size_t i = 0; i < n; ++i) ai->grad[i] += c * oi->grad[i];
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.rank() == 2 && b.rank() == 2,
        "matmul: rank-2 required: " + shape_str(a.shape()) + " x " +
            shape_str(b.shape()));
  size_t m = a.shape()[0], k = a.shape()[1];
  size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions disagree: " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out = make_op_output({m, n});
  mm_acc(a.data(), b.data(), out.mut_data(), m, k, n);
  if (want_grad({&a, &b})) {
    Impl ai = a.impl(), bi = b.impl(), oi = out.impl();
    bool ga = a.requires_grad(), gb = b.requires_grad();
    record_op(out, [ai, bi, oi, ga, gb, m, k, n]() {
      if (ga) {
        ai->ensure_grad();
        mm_a_bt_acc(oi->grad.data(), bi->data.data(), ai->grad.data(), m, n, k);
      }
      if (gb) {
        bi->ensure_grad();
        mm_at_b_acc(ai->data.data(), oi->grad.data(), bi->grad.data(), m, k, n);
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  check(a.rank() == 2, "transpose: rank-2 required, got " + shape_str(a.shape()));
  size_t m = a.shape()[0], n = a.shape()[1];
  Tensor out = make_op_output({n, m});
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < n; ++j) out.impl()->data[j * m + i] = a.at(i, j);
  }
  if (want_grad({&a})) {
    Impl ai = a.impl(), oi = out.impl();
    record_op(out, [ai, oi, m, n]() {
      ai->ensure_grad();
      for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) ai->grad[i * n + j] += oi->grad[j * m + i];
      }
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_rows: no inputs");
  size_t cols = 0, rows = 0;
  for (const Tensor& p : parts) {
    check(p.rank() == 2,
          "concat_rows: rank-2 required, got " + shape_str(p.shape()));
    if (cols == 0) {
      cols = p.shape()[1];
    } else if (p.shape()[1] != cols) {
      throw ShapeError("concat_rows: column counts disagree: " +
                       std::to_string(cols) + " vs " +
                       shape_str(p.shape()));
    }
    rows += p.shape()[0];
  }
  Tensor out = make_op_output({rows, cols});
  size_t r = 0;
  for (const Tensor& p : parts) {
    std::memcpy(out.mut_data() + r * cols, p.data(),
                p.numel() * sizeof(double));
    r += p.shape()[0];
  }
  bool any = false;
  for (const Tensor& p : parts) any = any || p.requires_grad();
  if (Tape::active() != nullptr && any) {
    std::vector<Impl> impls;
    std::vector<uint8_t> grads;
    for (const Tensor& p : parts) {
      impls.push_back(p.impl());
      grads.push_back(p.requires_grad() ? 1 : 0);
    }
    Impl oi = out.impl();
    record_op(out, [impls, grads, oi, cols]() {
      size_t r = 0;
      for (size_t i = 0; i < impls.size(); ++i) {
        size_t pr = impls[i]->shape[0];
        if (grads[i]) {
          impls[i]->ensure_grad();
          const double* src = oi->grad.data() + r * cols;
          for (size_t j = 0; j < pr * cols; ++j) impls[i]->grad[j] += src[j];
        }
        r += pr;
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& a, size_t start, size_t len) {
  check(a.rank() == 2, "slice_rows: rank-2 required, got " + shape_str(a.shape()));
  size_t m = a.shape()[0], n = a.shape()[1];
  if (start + len > m) {
    throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of " +
                     shape_str(a.shape()));
  }
  Tensor out = make_op_output({len, n});
  std::memcpy(out.mut_data(), a.data() + start * n, len * n * sizeof(double));
  if (want_grad({&a})) {
    Impl ai = a.impl(), oi = out.impl();
    record_op(out, [ai, oi, start, len, n]() {
      ai->ensure_grad();
      double* dst = ai->grad.data() + start * n;
      for (size_t j = 0; j < len * n; ++j) dst[j] += oi->grad[j];
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_cols: no inputs");
  size_t rows = 0, cols = 0;
  for (const Tensor& p : parts) {
    check(p.rank() == 2,
          "concat_cols: rank-2 required, got " + shape_str(p.shape()));
    if (rows == 0) {
      rows = p.shape()[0];
    } else if (p.shape()[0] != rows) {
      throw ShapeError("concat_cols: row counts disagree: " +
                       std::to_string(rows) + " vs " + shape_str(p.shape()));
    }
    cols += p.shape()[1];
  }
  Tensor out = make_op_output({rows, cols});
  size_t c = 0;
  for (const Tensor& p : parts) {
    size_t pc = p.shape()[1];
    for (size_t i = 0; i < rows; ++i) {
      std::memcpy(out.mut_data() + i * cols + c, p.data() + i * pc,
                  pc * sizeof(double));
    }
    c += pc;
  }
  bool any = false;
  for (const Tensor& p : parts) any = any || p.requires_grad();
  if (Tape::active() != nullptr && any) {
    std::vector<Impl> impls;
    std::vector<uint8_t> grads;
    for (const Tensor& p : parts) {
      impls.push_back(p.impl());
      grads.push_back(p.requires_grad() ? 1 : 0);
    }
    Impl oi = out.impl();
    record_op(out, [impls, grads, oi, rows, cols]() {
      size_t c = 0;
      for (size_t i = 0; i < impls.size(); ++i) {
        size_t pc = impls[i]->shape[1];
        if (grads[i]) {
          impls[i]->ensure_grad();
          for (size_t r = 0; r < rows; ++r) {
            const double* src = oi->grad.data() + r * cols + c;
            double* dst = impls[i]->grad.data() + r * pc;
            for (size_t j = 0; j < pc; ++j) dst[j] += src[j];
          }
        }
        c += pc;
      }
    });
  }
  return out;
}

Tensor gelu(const Tensor& a) {
  Tensor out = make_op_output(a.shape());
  size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) {
    double x = a.at(i);
    out.impl()->data[i] = 0.5 * x * (1.0 + std::erf(x / kSqrt2));
  }
  if (want_grad({&a})) {
    Impl ai = a.impl(), oi = out.impl();
    record_op(out, [ai, oi, n]() {
      ai->ensure_grad();
      for (size_t i = 0; i < n; ++i) {
        double x = ai->data[i];
        double cdf = 0.5 * (1.0 + std::erf(x / kSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        ai->grad[i] += oi->grad[i] * (cdf + x * pdf);
      }
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& a) {
  Tensor out = make_op_output(a.shape());
  size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) {
    double x = a.at(i);
    // Evaluated from the larger exponent side so extreme logits stay finite.
    out.impl()->data[i] =
        x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                 : std::exp(x) / (1.0 + std::exp(x));
  }
  if (want_grad({&a})) {
    Impl ai = a.impl(), oi = out.impl();
    record_op(out, [ai, oi, n]() {
      ai->ensure_grad();
      for (size_t i = 0; i < n; ++i) {
        double y = oi->data[i];
        ai->grad[i] += oi->grad[i] * y * (1.0 - y);
      }
    });
  }
  return out;
}

Tensor log(const Tensor& a) {
  Tensor out = make_op_output(a.shape());
  size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) out.impl()->data[i] = std::log(a.at(i));
  if (want_grad({&a})) {
    Impl ai = a.impl(), oi = out.impl();
    record_op(out, [ai, oi, n]() {
      ai->ensure_grad();
      for (size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i] / ai->data[i];
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  check(x.rank() == 2 && w.rank() == 2 && b.rank() == 1,
        "linear: expected x rank-2, w rank-2, b rank-1: " +
            shape_str(x.shape()) + ", " + shape_str(w.shape()) + ", " +
            shape_str(b.shape()));
  size_t n = x.shape()[0], in = x.shape()[1];
  size_t in2 = w.shape()[0], out_dim = w.shape()[1];
  if (in != in2 || b.shape()[0] != out_dim) {
    throw ShapeError("linear: shapes disagree: x " + shape_str(x.shape()) +
                     ", w " + shape_str(w.shape()) + ", b " +
                     shape_str(b.shape()));
  }
  Tensor out = make_op_output({n, out_dim});
  for (size_t i = 0; i < n; ++i) {
    double* orow = out.mut_data() + i * out_dim;
    for (size_t j = 0; j < out_dim; ++j) orow[j] = b.at(j);
  }
  mm_acc(x.data(), w.data(), out.mut_data(), n, in, out_dim);
  if (want_grad({&x, &w, &b})) {
    Impl xi = x.impl(), wi = w.impl(), bi = b.impl(), oi = out.impl();
    bool gx = x.requires_grad(), gw = w.requires_grad(), gb = b.requires_grad();
    record_op(out, [xi, wi, bi, oi, gx, gw, gb, n, in, out_dim]() {
      if (gx) {
        xi->ensure_grad();
        mm_a_bt_acc(oi->grad.data(), wi->data.data(), xi->grad.data(), n,
                    out_dim, in);
      }
      if (gw) {
        wi->ensure_grad();
        mm_at_b_acc(xi->data.data(), oi->grad.data(), wi->grad.data(), n, in,
                    out_dim);
      }
      if (gb) {
        bi->ensure_grad();
        for (size_t i = 0; i < n; ++i) {
          const double* grow = oi->grad.data() + i * out_dim;
          for (size_t j = 0; j < out_dim; ++j) bi->grad[j] += grow[j];
        }
      }
    });
  }
  return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  check(table.rank() == 2,
        "embedding_lookup: rank-2 table required, got " + shape_str(table.shape()));
  size_t v = table.shape()[0], d = table.shape()[1];
  for (int id : ids) {
    if (id < 0 || static_cast<size_t>(id) >= v) {
      throw ValueError("embedding_lookup: id " + std::to_string(id) +
                       " outside table " + shape_str(table.shape()));
    }
  }
  Tensor out = make_op_output({ids.size(), d});
  for (size_t r = 0; r < ids.size(); ++r) {
    std::memcpy(out.mut_data() + r * d, table.data() + ids[r] * d,
                d * sizeof(double));
  }
  if (want_grad({&table})) {
    Impl ti = table.impl(), oi = out.impl();
    record_op(out, [ti, oi, ids, d]() {
      ti->ensure_grad();
      for (size_t r = 0; r < ids.size(); ++r) {
        const double* src = oi->grad.data() + r * d;
        double* dst = ti->grad.data() + static_cast<size_t>(ids[r]) * d;
        for (size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor softmax_masked(const Tensor& x, const std::vector<uint8_t>& mask) {
  check(x.rank() == 2,
        "softmax_masked: rank-2 required, got " + shape_str(x.shape()));
  size_t m = x.shape()[0], n = x.shape()[1];
  if (mask.size() != m * n) {
    throw ShapeError("softmax_masked: mask size " + std::to_string(mask.size()) +
                     " for shape " + shape_str(x.shape()));
  }
  Tensor out = make_op_output({m, n});
  for (size_t i = 0; i < m; ++i) {
    const double* xrow = x.data() + i * n;
    const uint8_t* mrow = mask.data() + i * n;
    double* orow = out.mut_data() + i * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < n; ++j) {
      if (mrow[j] && xrow[j] > mx) mx = xrow[j];
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw ValueError("softmax_masked: row " + std::to_string(i) +
                       " has no unmasked entry");
    }
    double z = 0.0;
    for (size_t j = 0; j < n; ++j) {
      if (mrow[j]) {
        orow[j] = std::exp(xrow[j] - mx);
        z += orow[j];
      } else {
        orow[j] = 0.0;
      }
    }
    for (size_t j = 0; j < n; ++j) orow[j] /= z;
  }
  if (want_grad({&x})) {
    Impl xi = x.impl(), oi = out.impl();
    record_op(out, [xi, oi, mask, m, n]() {
      xi->ensure_grad();
      for (size_t i = 0; i < m; ++i) {
        const double* s = oi->data.data() + i * n;
        const double* g = oi->grad.data() + i * n;
        const uint8_t* mrow = mask.data() + i * n;
        double dot = 0.0;
        for (size_t j = 0; j < n; ++j) dot += g[j] * s[j];
        double* dx = xi->grad.data() + i * n;
        for (size_t j = 0; j < n; ++j) {
          if (mrow[j]) dx[j] += s[j] * (g[j] - dot);
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  check(x.rank() == 2 && gain.rank() == 1 && bias.rank() == 1,
        "layer_norm: expected x rank-2, gain/bias rank-1: " +
            shape_str(x.shape()) + ", " + shape_str(gain.shape()) + ", " +
            shape_str(bias.shape()));
  size_t m = x.shape()[0], d = x.shape()[1];
  if (gain.shape()[0] != d || bias.shape()[0] != d) {
    throw ShapeError("layer_norm: gain/bias length must equal columns: x " +
                     shape_str(x.shape()) + ", gain " + shape_str(gain.shape()) +
                     ", bias " + shape_str(bias.shape()));
  }
  Tensor out = make_op_output({m, d});
  // Inverse std and normalized values are kept for backward.
  std::vector<double> inv_std(m), xhat(m * d);
  for (size_t i = 0; i < m; ++i) {
    const double* xrow = x.data() + i * d;
    double mu = 0.0;
    for (size_t j = 0; j < d; ++j) mu += xrow[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (size_t j = 0; j < d; ++j) {
      double c = xrow[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double inv = 1.0 / std::sqrt(var + eps);
    inv_std[i] = inv;
    double* orow = out.mut_data() + i * d;
    for (size_t j = 0; j < d; ++j) {
      double xh = (xrow[j] - mu) * inv;
      xhat[i * d + j] = xh;
      orow[j] = gain.at(j) * xh + bias.at(j);
    }
  }
  if (want_grad({&x, &gain, &bias})) {
    Impl xi = x.impl(), gi = gain.impl(), bi = bias.impl(), oi = out.impl();
    bool gx = x.requires_grad(), gg = gain.requires_grad(),
         gb = bias.requires_grad();
    record_op(out, [xi, gi, bi, oi, gx, gg, gb, m, d,
                    inv_std = std::move(inv_std), xhat = std::move(xhat)]() {
      if (gg) gi->ensure_grad();
      if (gb) bi->ensure_grad();
      if (gx) xi->ensure_grad();
      for (size_t i = 0; i < m; ++i) {
        const double* g = oi->grad.data() + i * d;
        const double* xh = xhat.data() + i * d;
        if (gg || gb) {
          for (size_t j = 0; j < d; ++j) {
            if (gg) gi->grad[j] += g[j] * xh[j];
            if (gb) bi->grad[j] += g[j];
          }
        }
        if (gx) {
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (size_t j = 0; j < d; ++j) {
            double dxh = g[j] * gi->data[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
          }
          mean_dxh /= static_cast<double>(d);
          mean_dxh_xh /= static_cast<double>(d);
          double* dx = xi->grad.data() + i * d;
          for (size_t j = 0; j < d; ++j) {
            double dxh = g[j] * gi->data[j];
            dx[j] += inv_std[i] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
          }
        }
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  Tensor out = make_op_output({1});
  double acc = 0.0;
  size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) acc += a.at(i);
  out.impl()->data[0] = acc;
  if (want_grad({&a})) {
    Impl ai = a.impl(), oi = out.impl();
    record_op(out, [ai, oi, n]() {
      ai->ensure_grad();
      for (size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[0];
    });
  }
  return out;
}

Tensor cross_entropy_terms(const Tensor& logits, const std::vector<int>& labels) {
  check(logits.rank() == 2,
        "cross_entropy_terms: rank-2 required, got " + shape_str(logits.shape()));
  size_t n = logits.shape()[0], c = logits.shape()[1];
  if (labels.size() != n) {
    throw ShapeError("cross_entropy_terms: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<size_t>(y) >= c) {
      throw ValueError("cross_entropy_terms: label " + std::to_string(y) +
                       " outside [0, " + std::to_string(c) + ")");
    }
  }
  Tensor out = make_op_output({n});
  for (size_t i = 0; i < n; ++i) {
    const double* row = logits.data() + i * c;
    double mx = row[0];
    for (size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    out.impl()->data[i] = mx + std::log(z) - row[labels[i]];
  }
  if (want_grad({&logits})) {
    Impl li = logits.impl(), oi = out.impl();
    record_op(out, [li, oi, labels, n, c]() {
      li->ensure_grad();
      for (size_t i = 0; i < n; ++i) {
        const double* row = li->data.data() + i * c;
        double mx = row[0];
        for (size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        double g = oi->grad[i];
        double* dl = li->grad.data() + i * c;
        for (size_t j = 0; j < c; ++j) {
          double p = std::exp(row[j] - mx) / z;
          dl[j] += g * (p - (static_cast<size_t>(labels[i]) == j ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

Tensor bce_with_logits_terms(const Tensor& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape()) {
    throw ShapeError("bce_with_logits_terms: shapes disagree: " +
                     shape_str(logits.shape()) + " vs " +
                     shape_str(targets.shape()));
  }
  Tensor out = make_op_output(logits.shape());
  size_t n = logits.numel();
  for (size_t i = 0; i < n; ++i) {
    double x = logits.at(i), y = targets.at(i);
    out.impl()->data[i] =
        std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  if (want_grad({&logits, &targets})) {
    Impl li = logits.impl(), ti = targets.impl(), oi = out.impl();
    bool gl = logits.requires_grad(), gt = targets.requires_grad();
    record_op(out, [li, ti, oi, gl, gt, n]() {
      if (gl) li->ensure_grad();
      if (gt) ti->ensure_grad();
      for (size_t i = 0; i < n; ++i) {
        double x = li->data[i];
        double sig = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                              : std::exp(x) / (1.0 + std::exp(x));
        if (gl) li->grad[i] += oi->grad[i] * (sig - ti->data[i]);
        if (gt) ti->grad[i] += oi->grad[i] * (-x);
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& a, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ValueError("dropout: rate must lie in [0, 1), got " +
                     std::to_string(rate));
  }
  if (rate == 0.0) return a;
  size_t n = a.numel();
  std::vector<double> keep(n);
  double inv = 1.0 / (1.0 - rate);
  for (size_t i = 0; i < n; ++i) keep[i] = rng.uniform() < rate ? 0.0 : inv;
  Tensor out = make_op_output(a.shape());
  for (size_t i = 0; i < n; ++i) out.impl()->data[i] = a.at(i) * keep[i];
  if (want_grad({&a})) {
    Impl ai = a.impl(), oi = out.impl();
    record_op(out, [ai, oi, keep = std::move(keep), n]() {
      ai->ensure_grad();
      for (size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i] * keep[i];
    });
  }
  return out;
}

bool all_finite(const Tensor& a) {
  size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) {
    if (!std::isfinite(a.at(i))) return false;
  }
  return true;
}

}  // namespace edgeformer
