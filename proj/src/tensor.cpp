#include "rgen/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rgen {

namespace {

thread_local Tape* g_active_tape = nullptr;

void ensure_grad(const std::shared_ptr<TensorNode>& node) {
  if (node->grad.empty()) node->grad.assign(node->data.size(), 0.0);
}

bool want_grad(const Tensor& t) {
  return Tape::active() != nullptr && t.requires_grad();
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA[m,k] += G[m,n] * B[k,n]^T
void gemm_nt_acc(const double* g, const double* b, double* da, std::size_t m, std::size_t n,
                 std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += grow[j] * brow[j];
      da[i * k + p] += dot;
    }
  }
}

// dB[k,n] += A[m,k]^T * G[m,n]
void gemm_tn_acc(const double* a, const double* g, double* db, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t p = 0; p < m; ++p) {
    const double* grow = g + p * n;
    for (std::size_t i = 0; i < k; ++i) {
      const double av = a[p * k + i];
      if (av == 0.0) continue;
      double* drow = db + i * n;
      for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
    }
  }
}

}  // namespace

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
  auto node = std::make_shared<TensorNode>();
  node->data.assign(shape_numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(std::vector<std::size_t> shape, std::vector<double> data,
                         bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not hold " +
                                std::to_string(data.size()) + " values");
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

double Tensor::value() const {
  if (size() != 1) {
    throw std::logic_error("tensor: value() needs a one-element tensor, got " +
                           shape_str(shape()));
  }
  return node_->data[0];
}

const std::vector<double>& Tensor::grad() const {
  if (node_->grad.empty()) {
    throw std::logic_error("tensor: gradient not populated; run backward() first");
  }
  return node_->grad;
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

bool Tensor::all_finite() const {
  for (double v : node_->data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  }
  // intermediates restart from scratch each pass; only leaves accumulate
  for (const auto& node : outputs_) node->grad.clear();
  ensure_grad(loss.node());
  loss.node()->grad[0] = 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace {

struct BatchPlan {
  std::vector<std::size_t> out_batch;  // broadcast batch shape
  std::size_t batches = 1;
  std::vector<std::size_t> a_stride;  // per batch axis, 0 where broadcast
  std::vector<std::size_t> b_stride;

  std::size_t offset_a(std::size_t flat) const { return offset(flat, a_stride); }
  std::size_t offset_b(std::size_t flat) const { return offset(flat, b_stride); }

 private:
  std::size_t offset(std::size_t flat, const std::vector<std::size_t>& stride) const {
    std::size_t off = 0;
    for (std::size_t ax = out_batch.size(); ax-- > 0;) {
      const std::size_t idx = flat % out_batch[ax];
      flat /= out_batch[ax];
      off += idx * stride[ax];
    }
    return off;
  }
};

BatchPlan plan_batches(const std::vector<std::size_t>& a_shape,
                       const std::vector<std::size_t>& b_shape, std::size_t a_mat,
                       std::size_t b_mat, const char* op) {
  const std::size_t a_batch_rank = a_shape.size() - 2;
  const std::size_t b_batch_rank = b_shape.size() - 2;
  const std::size_t rank = std::max(a_batch_rank, b_batch_rank);

  BatchPlan plan;
  plan.out_batch.assign(rank, 1);
  plan.a_stride.assign(rank, 0);
  plan.b_stride.assign(rank, 0);

  std::vector<std::size_t> a_dims(rank, 1), b_dims(rank, 1);
  for (std::size_t i = 0; i < a_batch_rank; ++i) a_dims[rank - a_batch_rank + i] = a_shape[i];
  for (std::size_t i = 0; i < b_batch_rank; ++i) b_dims[rank - b_batch_rank + i] = b_shape[i];

  for (std::size_t i = 0; i < rank; ++i) {
    if (a_dims[i] != b_dims[i] && a_dims[i] != 1 && b_dims[i] != 1) {
      throw std::invalid_argument(std::string(op) + ": batch extents incompatible: " +
                                  shape_str(a_shape) + " vs " + shape_str(b_shape));
    }
    plan.out_batch[i] = std::max(a_dims[i], b_dims[i]);
    plan.batches *= plan.out_batch[i];
  }

  // row-major strides in units of one matrix
  std::size_t sa = a_mat, sb = b_mat;
  for (std::size_t ax = rank; ax-- > 0;) {
    plan.a_stride[ax] = (a_dims[ax] == 1) ? 0 : sa;
    plan.b_stride[ax] = (b_dims[ax] == 1) ? 0 : sb;
    sa *= a_dims[ax];
    sb *= b_dims[ax];
  }
  return plan;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw std::invalid_argument("matmul: operands must have rank >= 2, got " + shape_str(as) +
                                " and " + shape_str(bs));
  }
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as[as.size() - 1];
  const std::size_t k2 = bs[bs.size() - 2];
  const std::size_t n = bs[bs.size() - 1];
  if (k != k2) {
    throw std::invalid_argument("matmul: inner extents differ: " + shape_str(as) + " vs " +
                                shape_str(bs));
  }

  const BatchPlan plan = plan_batches(as, bs, m * k, k * n, "matmul");

  std::vector<std::size_t> out_shape = plan.out_batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out = Tensor::zeros(std::move(out_shape));

  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* od = out.data().data();
  for (std::size_t bt = 0; bt < plan.batches; ++bt) {
    gemm_acc(ad + plan.offset_a(bt), bd + plan.offset_b(bt), od + bt * m * n, m, k, n);
  }

  if (want_grad(a) || want_grad(b)) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape::active()->record(on, [an, bn, on, plan, m, k, n]() {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      if (an->requires_grad) {
        ensure_grad(an);
        for (std::size_t bt = 0; bt < plan.batches; ++bt) {
          gemm_nt_acc(g + bt * m * n, bn->data.data() + plan.offset_b(bt),
                      an->grad.data() + plan.offset_a(bt), m, n, k);
        }
      }
      if (bn->requires_grad) {
        ensure_grad(bn);
        for (std::size_t bt = 0; bt < plan.batches; ++bt) {
          gemm_tn_acc(an->data.data() + plan.offset_a(bt), g + bt * m * n,
                      bn->grad.data() + plan.offset_b(bt), m, k, n);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// add (trailing-suffix broadcast), multiply, scale
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (bs.size() > as.size() ||
      !std::equal(bs.begin(), bs.end(), as.end() - static_cast<std::ptrdiff_t>(bs.size()))) {
    throw std::invalid_argument("add: shape " + shape_str(bs) +
                                " is not a trailing suffix of " + shape_str(as));
  }
  const std::size_t bn_size = b.size();
  const std::size_t repeats = a.size() / std::max<std::size_t>(bn_size, 1);

  Tensor out = Tensor::zeros(as);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* od = out.data().data();
  for (std::size_t r = 0; r < repeats; ++r) {
    const std::size_t base = r * bn_size;
    for (std::size_t i = 0; i < bn_size; ++i) od[base + i] = ad[base + i] + bd[i];
  }

  if (want_grad(a) || want_grad(b)) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape::active()->record(on, [an, bn, on, repeats, bn_size]() {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      if (an->requires_grad) {
        ensure_grad(an);
        for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += g[i];
      }
      if (bn->requires_grad) {
        ensure_grad(bn);
        for (std::size_t r = 0; r < repeats; ++r) {
          const std::size_t base = r * bn_size;
          for (std::size_t i = 0; i < bn_size; ++i) bn->grad[i] += g[base + i];
        }
      }
    });
  }
  return out;
}

Tensor multiply(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("multiply: shapes differ: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];

  if (want_grad(a) || want_grad(b)) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape::active()->record(on, [an, bn, on]() {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      if (an->requires_grad) {
        ensure_grad(an);
        for (std::size_t i = 0; i < an->data.size(); ++i) an->grad[i] += g[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        ensure_grad(bn);
        for (std::size_t i = 0; i < bn->data.size(); ++i) bn->grad[i] += g[i] * an->data[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * c;

  if (want_grad(a)) {
    out.set_requires_grad(true);
    auto an = a.node(), on = out.node();
    Tape::active()->record(on, [an, on, c]() {
      if (on->grad.empty()) return;
      ensure_grad(an);
      for (std::size_t i = 0; i < an->data.size(); ++i) an->grad[i] += on->grad[i] * c;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax / layer_norm / cross entropy
// ---------------------------------------------------------------------------

namespace {

struct AxisPlan {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisPlan plan_axis(const std::vector<std::size_t>& shape, int axis, const char* op) {
  const int rank = static_cast<int>(shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw std::invalid_argument(std::string(op) + ": axis out of range for shape " +
                                shape_str(shape));
  }
  AxisPlan plan;
  for (int i = 0; i < axis; ++i) plan.outer *= shape[i];
  plan.len = shape[axis];
  for (int i = axis + 1; i < rank; ++i) plan.inner *= shape[i];
  return plan;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  const AxisPlan plan = plan_axis(x.shape(), axis, "softmax");
  Tensor out = Tensor::zeros(x.shape());
  const double* xd = x.data().data();
  double* od = out.data().data();

  for (std::size_t o = 0; o < plan.outer; ++o) {
    for (std::size_t in = 0; in < plan.inner; ++in) {
      const std::size_t base = o * plan.len * plan.inner + in;
      double mx = xd[base];
      for (std::size_t t = 1; t < plan.len; ++t) mx = std::max(mx, xd[base + t * plan.inner]);
      double total = 0.0;
      for (std::size_t t = 0; t < plan.len; ++t) {
        const double e = std::exp(xd[base + t * plan.inner] - mx);
        od[base + t * plan.inner] = e;
        total += e;
      }
      const double inv = 1.0 / total;
      for (std::size_t t = 0; t < plan.len; ++t) od[base + t * plan.inner] *= inv;
    }
  }

  if (want_grad(x)) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    Tape::active()->record(on, [xn, on, plan]() {
      if (on->grad.empty()) return;
      ensure_grad(xn);
      const double* g = on->grad.data();
      const double* s = on->data.data();
      for (std::size_t o = 0; o < plan.outer; ++o) {
        for (std::size_t in = 0; in < plan.inner; ++in) {
          const std::size_t base = o * plan.len * plan.inner + in;
          double dot = 0.0;
          for (std::size_t t = 0; t < plan.len; ++t) {
            const std::size_t idx = base + t * plan.inner;
            dot += g[idx] * s[idx];
          }
          for (std::size_t t = 0; t < plan.len; ++t) {
            const std::size_t idx = base + t * plan.inner;
            xn->grad[idx] += s[idx] * (g[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0) throw std::invalid_argument("layer_norm: input must have rank >= 1");
  const std::size_t dim = x.shape().back();
  if (gain.shape() != std::vector<std::size_t>{dim} ||
      bias.shape() != std::vector<std::size_t>{dim}) {
    throw std::invalid_argument("layer_norm: gain/bias must have shape [" +
                                std::to_string(dim) + "], got " + shape_str(gain.shape()) +
                                " and " + shape_str(bias.shape()));
  }
  const std::size_t rows = x.size() / dim;

  Tensor out = Tensor::zeros(x.shape());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  const double* xd = x.data().data();
  const double* gd = gain.data().data();
  const double* bd = bias.data().data();
  double* od = out.data().data();

  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * dim;
    double mean = 0.0;
    for (std::size_t j = 0; j < dim; ++j) mean += xd[base + j];
    mean /= static_cast<double>(dim);
    double var = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = xd[base + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(dim);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < dim; ++j) {
      const double h = (xd[base + j] - mean) * inv;
      xhat[base + j] = h;
      od[base + j] = h * gd[j] + bd[j];
    }
  }

  if (want_grad(x) || want_grad(gain) || want_grad(bias)) {
    out.set_requires_grad(true);
    auto xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
    Tape::active()->record(
        on, [xn, gn, bn, on, rows, dim, xhat = std::move(xhat), inv_std = std::move(inv_std)]() {
          if (on->grad.empty()) return;
          const double* g = on->grad.data();
          if (gn->requires_grad) {
            ensure_grad(gn);
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t j = 0; j < dim; ++j) {
                gn->grad[j] += g[r * dim + j] * xhat[r * dim + j];
              }
            }
          }
          if (bn->requires_grad) {
            ensure_grad(bn);
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t j = 0; j < dim; ++j) bn->grad[j] += g[r * dim + j];
            }
          }
          if (xn->requires_grad) {
            ensure_grad(xn);
            const double inv_dim = 1.0 / static_cast<double>(dim);
            for (std::size_t r = 0; r < rows; ++r) {
              const std::size_t base = r * dim;
              double mean_gh = 0.0, mean_ghx = 0.0;
              for (std::size_t j = 0; j < dim; ++j) {
                const double gh = g[base + j] * gn->data[j];
                mean_gh += gh;
                mean_ghx += gh * xhat[base + j];
              }
              mean_gh *= inv_dim;
              mean_ghx *= inv_dim;
              for (std::size_t j = 0; j < dim; ++j) {
                const double gh = g[base + j] * gn->data[j];
                xn->grad[base + j] +=
                    inv_std[r] * (gh - mean_gh - xhat[base + j] * mean_ghx);
              }
            }
          }
        });
  }
  return out;
}

Tensor cross_entropy_from_logits(const Tensor& logits, const std::vector<int>& targets,
                                 int pad_id) {
  if (logits.rank() < 2) {
    throw std::invalid_argument("cross_entropy: logits must have rank >= 2, got " +
                                shape_str(logits.shape()));
  }
  const std::size_t vocab = logits.shape().back();
  const std::size_t rows = logits.size() / vocab;
  if (targets.size() != rows) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(rows) + " logit rows");
  }

  const double* ld = logits.data().data();
  double total = 0.0;
  std::size_t live = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int t = targets[r];
    if (t == pad_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw std::invalid_argument("cross_entropy: target id " + std::to_string(t) +
                                  " out of range for vocab " + std::to_string(vocab) +
                                  " at position " + std::to_string(r));
    }
    const std::size_t base = r * vocab;
    double mx = ld[base];
    for (std::size_t v = 1; v < vocab; ++v) mx = std::max(mx, ld[base + v]);
    double lse = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) lse += std::exp(ld[base + v] - mx);
    total += mx + std::log(lse) - ld[base + static_cast<std::size_t>(t)];
    ++live;
  }
  if (live == 0) {
    throw std::invalid_argument("cross_entropy: degenerate batch, every position is padding");
  }

  Tensor out = Tensor::scalar(total / static_cast<double>(live));
  if (want_grad(logits)) {
    out.set_requires_grad(true);
    auto ln = logits.node(), on = out.node();
    Tape::active()->record(on, [ln, on, targets, pad_id, rows, vocab, live]() {
      if (on->grad.empty()) return;
      ensure_grad(ln);
      const double g = on->grad[0] / static_cast<double>(live);
      for (std::size_t r = 0; r < rows; ++r) {
        const int t = targets[r];
        if (t == pad_id) continue;
        const std::size_t base = r * vocab;
        double mx = ln->data[base];
        for (std::size_t v = 1; v < vocab; ++v) mx = std::max(mx, ln->data[base + v]);
        double total = 0.0;
        for (std::size_t v = 0; v < vocab; ++v) total += std::exp(ln->data[base + v] - mx);
        const double inv = 1.0 / total;
        for (std::size_t v = 0; v < vocab; ++v) {
          const double p = std::exp(ln->data[base + v] - mx) * inv;
          ln->grad[base + v] += g * (p - (static_cast<std::size_t>(t) == v ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// relu / dropout
// ---------------------------------------------------------------------------

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  }
  if (want_grad(x)) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    Tape::active()->record(on, [xn, on]() {
      if (on->grad.empty()) return;
      ensure_grad(xn);
      for (std::size_t i = 0; i < xn->data.size(); ++i) {
        if (xn->data[i] > 0.0) xn->grad[i] += on->grad[i];
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double p, bool train_mode, Rng& rng) {
  if (p < 0.0 || p >= 1.0) {
    throw std::invalid_argument("dropout: probability must lie in [0,1), got " +
                                std::to_string(p));
  }
  if (!train_mode || p == 0.0) return x;

  const double inv_keep = 1.0 / (1.0 - p);
  std::vector<double> mask(x.size());
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = rng.uniform() < p ? 0.0 : inv_keep;
    out.data()[i] = x.data()[i] * mask[i];
  }

  if (want_grad(x)) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    Tape::active()->record(on, [xn, on, mask = std::move(mask)]() {
      if (on->grad.empty()) return;
      ensure_grad(xn);
      for (std::size_t i = 0; i < xn->data.size(); ++i) xn->grad[i] += on->grad[i] * mask[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, std::vector<std::size_t> new_shape) {
  if (shape_numel(new_shape) != x.size()) {
    throw std::invalid_argument("reshape: cannot reshape " + shape_str(x.shape()) + " to " +
                                shape_str(new_shape));
  }
  Tensor out = Tensor::from_data(std::move(new_shape), x.data());
  if (want_grad(x)) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    Tape::active()->record(on, [xn, on]() {
      if (on->grad.empty()) return;
      ensure_grad(xn);
      for (std::size_t i = 0; i < xn->data.size(); ++i) xn->grad[i] += on->grad[i];
    });
  }
  return out;
}

Tensor transpose_last_two(const Tensor& x) {
  if (x.rank() < 2) {
    throw std::invalid_argument("transpose_last_two: rank must be >= 2, got " +
                                shape_str(x.shape()));
  }
  const std::size_t m = x.shape()[x.rank() - 2];
  const std::size_t n = x.shape()[x.rank() - 1];
  const std::size_t batches = x.size() / (m * n);

  std::vector<std::size_t> out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  Tensor out = Tensor::zeros(std::move(out_shape));

  const double* xd = x.data().data();
  double* od = out.data().data();
  for (std::size_t b = 0; b < batches; ++b) {
    const std::size_t base = b * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) od[base + j * m + i] = xd[base + i * n + j];
    }
  }

  if (want_grad(x)) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    Tape::active()->record(on, [xn, on, batches, m, n]() {
      if (on->grad.empty()) return;
      ensure_grad(xn);
      for (std::size_t b = 0; b < batches; ++b) {
        const std::size_t base = b * m * n;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            xn->grad[base + i * n + j] += on->grad[base + j * m + i];
          }
        }
      }
    });
  }
  return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2) {
    throw std::invalid_argument("embedding_lookup: table must be rank 2, got " +
                                shape_str(table.shape()));
  }
  const std::size_t vocab = table.shape()[0];
  const std::size_t dim = table.shape()[1];
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw std::invalid_argument("embedding_lookup: id " + std::to_string(ids[i]) +
                                  " out of range for table with " + std::to_string(vocab) +
                                  " rows at position " + std::to_string(i));
    }
  }

  Tensor out = Tensor::zeros({ids.size(), dim});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double* src = table.data().data() + static_cast<std::size_t>(ids[i]) * dim;
    std::copy(src, src + dim, out.data().begin() + static_cast<std::ptrdiff_t>(i * dim));
  }

  if (want_grad(table)) {
    out.set_requires_grad(true);
    auto tn = table.node(), on = out.node();
    Tape::active()->record(on, [tn, on, ids, dim]() {
      if (on->grad.empty()) return;
      ensure_grad(tn);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const std::size_t row = static_cast<std::size_t>(ids[i]) * dim;
        for (std::size_t j = 0; j < dim; ++j) tn->grad[row + j] += on->grad[i * dim + j];
      }
    });
  }
  return out;
}

Tensor concat_last_axis(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_last_axis: no inputs");
  std::vector<std::size_t> lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::size_t total_last = 0;
  for (const Tensor& p : parts) {
    if (p.rank() == 0 ||
        !std::equal(lead.begin(), lead.end(), p.shape().begin())) {
      throw std::invalid_argument("concat_last_axis: leading extents differ: " +
                                  shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
    total_last += p.shape().back();
  }

  const std::size_t rows = shape_numel(lead);
  std::vector<std::size_t> out_shape = lead;
  out_shape.push_back(total_last);
  Tensor out = Tensor::zeros(std::move(out_shape));

  std::size_t col = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    const std::size_t w = p.shape().back();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(p.data().begin() + static_cast<std::ptrdiff_t>(r * w),
                p.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * w),
                out.data().begin() + static_cast<std::ptrdiff_t>(r * total_last + col));
    }
    col += w;
    any_grad = any_grad || want_grad(p);
  }

  if (any_grad) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorNode>> nodes;
    nodes.reserve(parts.size());
    for (const Tensor& p : parts) nodes.push_back(p.node());
    auto on = out.node();
    Tape::active()->record(on, [nodes, on, rows, total_last]() {
      if (on->grad.empty()) return;
      std::size_t col = 0;
      for (const auto& pn : nodes) {
        const std::size_t w = pn->data.size() / rows;
        if (pn->requires_grad) {
          ensure_grad(pn);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < w; ++j) {
              pn->grad[r * w + j] += on->grad[r * total_last + col + j];
            }
          }
        }
        col += w;
      }
    });
  }
  return out;
}

std::vector<Tensor> split_last_axis(const Tensor& x, std::size_t parts) {
  if (x.rank() == 0 || parts == 0 || x.shape().back() % parts != 0) {
    throw std::invalid_argument("split_last_axis: cannot split " + shape_str(x.shape()) +
                                " into " + std::to_string(parts) + " parts");
  }
  const std::size_t last = x.shape().back();
  const std::size_t w = last / parts;
  const std::size_t rows = x.size() / last;

  std::vector<std::size_t> part_shape = x.shape();
  part_shape.back() = w;

  std::vector<Tensor> out;
  out.reserve(parts);
  for (std::size_t p = 0; p < parts; ++p) {
    Tensor piece = Tensor::zeros(part_shape);
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(x.data().begin() + static_cast<std::ptrdiff_t>(r * last + p * w),
                x.data().begin() + static_cast<std::ptrdiff_t>(r * last + (p + 1) * w),
                piece.data().begin() + static_cast<std::ptrdiff_t>(r * w));
    }
    if (want_grad(x)) {
      piece.set_requires_grad(true);
      auto xn = x.node(), pn = piece.node();
      Tape::active()->record(pn, [xn, pn, rows, last, w, p]() {
        if (pn->grad.empty()) return;
        ensure_grad(xn);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < w; ++j) {
            xn->grad[r * last + p * w + j] += pn->grad[r * w + j];
          }
        }
      });
    }
    out.push_back(std::move(piece));
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor out = Tensor::scalar(total);
  if (want_grad(x)) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    Tape::active()->record(on, [xn, on]() {
      if (on->grad.empty()) return;
      ensure_grad(xn);
      for (std::size_t i = 0; i < xn->data.size(); ++i) xn->grad[i] += on->grad[0];
    });
  }
  return out;
}

}  // namespace rgen
