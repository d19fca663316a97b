// SPDX-License-Identifier: Apache-2.0
#include "scalabl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "kernels.hpp"
#include "scalabl/errors.hpp"
#include "scalabl/linalg.hpp"

namespace scalabl::ad {

namespace {

void require_matrix(const Var& a, const char* op) {
  if (a.value().rank() != 2) {
    throw ShapeError(std::string(op) + " expects a matrix, got " + shape_str(a.shape()));
  }
}

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + " shape mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

Tensor map(const Tensor& a, double (*f)(double)) {
  Tensor out = a;
  for (double& v : out.data()) v = f(v);
  return out;
}

Tensor colsum(const Tensor& g) {
  const std::size_t m = g.rows(), n = g.cols();
  Tensor out({n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += g(i, j);
  return out;
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.value().cols() != b.value().rows()) {
    throw ShapeError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  Tensor out({a.value().rows(), b.value().cols()});
  detail::gemm(a.value(), false, b.value(), false, out, false);
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) detail::gemm(g, false, b.value(), true, t.grad_buffer(a), true);
    if (t.requires_grad(b)) detail::gemm(a.value(), true, g, false, t.grad_buffer(b), true);
  }, "matmul");
}

Var matmul_nt(const Var& a, const Var& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  if (a.value().cols() != b.value().cols()) {
    throw ShapeError("matmul_nt shape mismatch: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()) + "^T");
  }
  Tensor out({a.value().rows(), b.value().rows()});
  detail::gemm(a.value(), false, b.value(), true, out, false);
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) detail::gemm(g, false, b.value(), false, t.grad_buffer(a), true);
    if (t.requires_grad(b)) detail::gemm(g, true, a.value(), false, t.grad_buffer(b), true);
  }, "matmul_nt");
}

Var transpose(const Var& a) {
  require_matrix(a, "transpose");
  return a.tape().record(a.value().transposed(), {a}, [a](Tape& t, const Tensor& g) {
    t.accumulate(a, g.transposed());
  }, "transpose");
}

Var reshape(const Var& a, Shape shape) {
  if (shape_numel(shape) != a.value().size()) {
    throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  return a.tape().record(a.value().reshaped(std::move(shape)), {a},
                         [a](Tape& t, const Tensor& g) { t.accumulate(a, g); }, "reshape");
}

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  return a.tape().record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  }, "add");
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  return a.tape().record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    if (t.requires_grad(b)) t.accumulate(b, -1.0 * g);
  }, "sub");
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  return a.tape().record(hadamard(a.value(), b.value()), {a, b},
                         [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) t.accumulate(a, hadamard(g, b.value()));
    if (t.requires_grad(b)) t.accumulate(b, hadamard(g, a.value()));
  }, "mul");
}

Var scale(const Var& a, double s) {
  return a.tape().record(s * a.value(), {a}, [a, s](Tape& t, const Tensor& g) {
    t.accumulate(a, s * g);
  }, "scale");
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v += s;
  return a.tape().record(std::move(out), {a},
                         [a](Tape& t, const Tensor& g) { t.accumulate(a, g); }, "add_scalar");
}

Var add_rowvec(const Var& x, const Var& v) {
  require_matrix(x, "add_rowvec");
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (v.value().rank() != 1 || v.value().size() != n) {
    throw ShapeError("add_rowvec: vector " + shape_str(v.shape()) + " vs matrix " +
                     shape_str(x.shape()));
  }
  Tensor out = x.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) += v.value()[j];
  return x.tape().record(std::move(out), {x, v}, [x, v](Tape& t, const Tensor& g) {
    t.accumulate(x, g);
    if (t.requires_grad(v)) t.accumulate(v, colsum(g));
  }, "add_rowvec");
}

Var mul_rowvec(const Var& x, const Var& v) {
  require_matrix(x, "mul_rowvec");
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (v.value().rank() != 1 || v.value().size() != n) {
    throw ShapeError("mul_rowvec: vector " + shape_str(v.shape()) + " vs matrix " +
                     shape_str(x.shape()));
  }
  Tensor out = x.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) *= v.value()[j];
  return x.tape().record(std::move(out), {x, v}, [x, v, m, n](Tape& t, const Tensor& g) {
    if (t.requires_grad(x)) {
      Tensor gx = g;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx(i, j) *= v.value()[j];
      t.accumulate(x, gx);
    }
    if (t.requires_grad(v)) {
      Tensor gv({n});
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gv[j] += g(i, j) * x.value()(i, j);
      t.accumulate(v, gv);
    }
  }, "mul_rowvec");
}

Var exp(const Var& a) {
  return a.tape().record(map(a.value(), [](double v) { return std::exp(v); }), {a},
                         [a](Tape& t, const Tensor& g) {
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= std::exp(a.value()[i]);
    t.accumulate(a, ga);
  }, "exp");
}

Var log(const Var& a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw NumericError("log of nonpositive value " + std::to_string(v));
  }
  return a.tape().record(map(a.value(), [](double v) { return std::log(v); }), {a},
                         [a](Tape& t, const Tensor& g) {
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] /= a.value()[i];
    t.accumulate(a, ga);
  }, "log");
}

Var relu(const Var& a) {
  return a.tape().record(map(a.value(), [](double v) { return v > 0.0 ? v : 0.0; }), {a},
                         [a](Tape& t, const Tensor& g) {
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (!(a.value()[i] > 0.0)) ga[i] = 0.0;
    t.accumulate(a, ga);
  }, "relu");
}

Var tanh(const Var& a) {
  return a.tape().record(map(a.value(), [](double v) { return std::tanh(v); }), {a},
                         [a](Tape& t, const Tensor& g) {
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const double y = std::tanh(a.value()[i]);
      ga[i] *= 1.0 - y * y;
    }
    t.accumulate(a, ga);
  }, "tanh");
}

Var diag_embed(const Var& v) {
  if (v.value().rank() != 1) throw ShapeError("diag_embed expects a vector");
  return v.tape().record(scalabl::diag_embed(v.value()), {v}, [v](Tape& t, const Tensor& g) {
    const std::size_t n = v.value().size();
    Tensor gv({n});
    for (std::size_t i = 0; i < n; ++i) gv[i] = g(i, i);
    t.accumulate(v, gv);
  }, "diag_embed");
}

namespace {

Tensor softmax_rows_value(const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  Tensor y = x;
  for (std::size_t i = 0; i < m; ++i) {
    double mx = y(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, y(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (y(i, j) = std::exp(y(i, j) - mx));
    for (std::size_t j = 0; j < n; ++j) y(i, j) /= z;
  }
  return y;
}

}  // namespace

Var softmax_rows(const Var& x) {
  require_matrix(x, "softmax_rows");
  auto y = std::make_shared<Tensor>(softmax_rows_value(x.value()));
  return x.tape().record(*y, {x}, [x, y](Tape& t, const Tensor& g) {
    const std::size_t m = y->rows(), n = y->cols();
    Tensor gx({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g(i, j) * (*y)(i, j);
      for (std::size_t j = 0; j < n; ++j) gx(i, j) = (*y)(i, j) * (g(i, j) - dot);
    }
    t.accumulate(x, gx);
  }, "softmax_rows");
}

Var layer_norm_rows(const Var& x, double eps) {
  require_matrix(x, "layer_norm_rows");
  const std::size_t m = x.value().rows(), n = x.value().cols();
  auto y = std::make_shared<Tensor>(Shape{m, n});
  auto inv_std = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += x.value()(i, j);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double c = x.value()(i, j) - mu;
      var += c * c;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < n; ++j) (*y)(i, j) = (x.value()(i, j) - mu) * is;
  }
  return x.tape().record(*y, {x}, [x, y, inv_std, m, n](Tape& t, const Tensor& g) {
    Tensor gx({m, n});
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < m; ++i) {
      double gmean = 0.0, gymean = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        gmean += g(i, j);
        gymean += g(i, j) * (*y)(i, j);
      }
      gmean *= inv_n;
      gymean *= inv_n;
      for (std::size_t j = 0; j < n; ++j)
        gx(i, j) = (*inv_std)[i] * (g(i, j) - gmean - (*y)(i, j) * gymean);
    }
    t.accumulate(x, gx);
  }, "layer_norm_rows");
}

Var cross_entropy(const Var& logits, std::span<const int> targets) {
  require_matrix(logits, "cross_entropy");
  const std::size_t m = logits.value().rows(), n = logits.value().cols();
  if (targets.size() != m || m == 0) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(m) + " rows");
  }
  auto probs = std::make_shared<Tensor>(softmax_rows_value(logits.value()));
  std::vector<int> tgt(targets.begin(), targets.end());
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (tgt[i] < 0 || static_cast<std::size_t>(tgt[i]) >= n) {
      throw ShapeError("cross_entropy: target " + std::to_string(tgt[i]) + " out of range");
    }
    double mx = logits.value()(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, logits.value()(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(logits.value()(i, j) - mx);
    total += mx + std::log(z) - logits.value()(i, static_cast<std::size_t>(tgt[i]));
  }
  return logits.tape().record(Tensor::scalar(total / static_cast<double>(m)), {logits},
                              [logits, probs, tgt, m](Tape& t, const Tensor& g) {
    Tensor gl = *probs;
    for (std::size_t i = 0; i < m; ++i) gl(i, static_cast<std::size_t>(tgt[i])) -= 1.0;
    t.accumulate(logits, (g[0] / static_cast<double>(m)) * gl);
  }, "cross_entropy");
}

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return a.tape().record(Tensor::scalar(total), {a}, [a](Tape& t, const Tensor& g) {
    t.accumulate(a, Tensor::full(a.shape(), g[0]));
  }, "sum");
}

Var mean(const Var& a) {
  const auto n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_rows");
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (begin > end || end > m) throw ShapeError("slice_rows out of range");
  Tensor out({end - begin, n});
  std::copy(x.value().data().begin() + static_cast<std::ptrdiff_t>(begin * n),
            x.value().data().begin() + static_cast<std::ptrdiff_t>(end * n), out.data().begin());
  return x.tape().record(std::move(out), {x}, [x, begin, n](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(x);
    for (std::size_t k = 0; k < g.size(); ++k) gx[begin * n + k] += g[k];
  }, "slice_rows");
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_cols");
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (begin > end || end > n) throw ShapeError("slice_cols out of range");
  const std::size_t w = end - begin;
  Tensor out({m, w});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out(i, j) = x.value()(i, begin + j);
  return x.tape().record(std::move(out), {x}, [x, begin, m, w](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) gx(i, begin + j) += g(i, j);
  }, "slice_cols");
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const std::size_t m = parts[0].value().rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.value().rows() != m) throw ShapeError("concat_cols row mismatch");
    total += p.value().cols();
  }
  Tensor out({m, total});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const std::size_t w = p.value().cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out(i, off + j) = p.value()(i, j);
    off += w;
  }
  return parts[0].tape().record(std::move(out), parts, [parts, m](Tape& t, const Tensor& g) {
    std::size_t o = 0;
    for (const Var& p : parts) {
      const std::size_t w = p.value().cols();
      if (t.requires_grad(p)) {
        Tensor& gp = t.grad_buffer(p);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) gp(i, j) += g(i, o + j);
      }
      o += w;
    }
  }, "concat_cols");
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  const std::size_t n = parts[0].value().cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.value().cols() != n) throw ShapeError("concat_rows column mismatch");
    total += p.value().rows();
  }
  Tensor out({total, n});
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(off));
    off += p.value().size();
  }
  return parts[0].tape().record(std::move(out), parts, [parts](Tape& t, const Tensor& g) {
    std::size_t o = 0;
    for (const Var& p : parts) {
      const std::size_t len = p.value().size();
      if (t.requires_grad(p)) {
        Tensor& gp = t.grad_buffer(p);
        for (std::size_t k = 0; k < len; ++k) gp[k] += g[o + k];
      }
      o += len;
    }
  }, "concat_rows");
}

Var gather_rows(const Var& table, std::span<const int> ids) {
  require_matrix(table, "gather_rows");
  const std::size_t vocab = table.value().rows(), d = table.value().cols();
  std::vector<int> idx(ids.begin(), ids.end());
  Tensor out({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab) {
      throw ShapeError("gather_rows: id " + std::to_string(idx[i]) + " out of range");
    }
    for (std::size_t j = 0; j < d; ++j) out(i, j) = table.value()(static_cast<std::size_t>(idx[i]), j);
  }
  return table.tape().record(std::move(out), {table}, [table, idx, d](Tape& t, const Tensor& g) {
    Tensor& gt = t.grad_buffer(table);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gt(static_cast<std::size_t>(idx[i]), j) += g(i, j);
  }, "gather_rows");
}

Var mean_pool(const Var& x, std::size_t seq_len) {
  require_matrix(x, "mean_pool");
  const std::size_t rows = x.value().rows(), d = x.value().cols();
  if (seq_len == 0 || rows % seq_len != 0) throw ShapeError("mean_pool: rows not a multiple of seq_len");
  const std::size_t b = rows / seq_len;
  const double inv = 1.0 / static_cast<double>(seq_len);
  Tensor out({b, d});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out(r / seq_len, j) += x.value()(r, j) * inv;
  return x.tape().record(std::move(out), {x}, [x, seq_len, rows, d, inv](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(x);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < d; ++j) gx(r, j) += g(r / seq_len, j) * inv;
  }, "mean_pool");
}

namespace {
const double* at(const Tensor& t, std::size_t r, std::size_t c) { return t.data().data() + r * t.cols() + c; }
double* at(Tensor& t, std::size_t r, std::size_t c) { return t.data().data() + r * t.cols() + c; }
}  // namespace

Var attention(const Var& q, const Var& k, const Var& v, std::size_t seq_len,
              std::size_t num_heads) {
  require_same(q, k, "attention");
  require_same(q, v, "attention");
  require_matrix(q, "attention");
  const std::size_t rows = q.value().rows(), d = q.value().cols();
  if (seq_len == 0 || rows % seq_len != 0 || num_heads == 0 || d % num_heads != 0) {
    throw ShapeError("attention: incompatible seq_len/num_heads for " + shape_str(q.shape()));
  }
  const std::size_t batch = rows / seq_len, dh = d / num_heads, T = seq_len;
  const double scale_f = 1.0 / std::sqrt(static_cast<double>(dh));
  // probs[(b*H + h)*T*T + i*T + j]
  auto probs = std::make_shared<std::vector<double>>(batch * num_heads * T * T);
  Tensor out({rows, d});
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  std::vector<double> srow(T);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < num_heads; ++h) {
      double* P = probs->data() + (b * num_heads + h) * T * T;
      const std::size_t c0 = h * dh;
      for (std::size_t i = 0; i < T; ++i) {
        const double* qi = at(Q, b * T + i, c0);
        double mx = -INFINITY;
        for (std::size_t j = 0; j < T; ++j) {
          const double* kj = at(K, b * T + j, c0);
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          srow[j] = s * scale_f;
          mx = std::max(mx, srow[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < T; ++j) z += (srow[j] = std::exp(srow[j] - mx));
        double* oi = at(out, b * T + i, c0);
        for (std::size_t j = 0; j < T; ++j) {
          const double p = srow[j] / z;
          P[i * T + j] = p;
          const double* vj = at(V, b * T + j, c0);
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
        }
      }
    }
  }
  return q.tape().record(std::move(out), {q, k, v},
                         [q, k, v, probs, batch, num_heads, T, dh, d, scale_f](Tape& t,
                                                                               const Tensor& g) {
    const bool gq = t.requires_grad(q), gk = t.requires_grad(k), gv = t.requires_grad(v);
    Tensor dq({batch * T, d}), dk({batch * T, d}), dv({batch * T, d});
    const Tensor& Q = q.value();
    const Tensor& K = k.value();
    const Tensor& V = v.value();
    std::vector<double> dp(T);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < num_heads; ++h) {
        const double* P = probs->data() + (b * num_heads + h) * T * T;
        const std::size_t c0 = h * dh;
        for (std::size_t i = 0; i < T; ++i) {
          const double* gi = at(g, b * T + i, c0);
          double rowdot = 0.0;
          for (std::size_t j = 0; j < T; ++j) {
            const double* vj = at(V, b * T + j, c0);
            double s = 0.0;
            for (std::size_t c = 0; c < dh; ++c) s += gi[c] * vj[c];
            dp[j] = s;
            rowdot += s * P[i * T + j];
            if (gv) {
              double* dvj = at(dv, b * T + j, c0);
              for (std::size_t c = 0; c < dh; ++c) dvj[c] += P[i * T + j] * gi[c];
            }
          }
          if (!gq && !gk) continue;
          const double* qi = at(Q, b * T + i, c0);
          double* dqi = at(dq, b * T + i, c0);
          for (std::size_t j = 0; j < T; ++j) {
            const double ds = P[i * T + j] * (dp[j] - rowdot) * scale_f;
            const double* kj = at(K, b * T + j, c0);
            double* dkj = at(dk, b * T + j, c0);
            for (std::size_t c = 0; c < dh; ++c) {
              dqi[c] += ds * kj[c];
              dkj[c] += ds * qi[c];
            }
          }
        }
      }
    }
    if (gq) t.accumulate(q, dq);
    if (gk) t.accumulate(k, dk);
    if (gv) t.accumulate(v, dv);
  }, "attention");
}

namespace {

// Gradient of A = QR given cotangents of Q and R (square, full rank):
//   A_bar = Q [R_bar R^T + tril(N - N^T, -1)] R^{-T},  N = Q^T Q_bar - R_bar R^T.
Tensor qr_backward(const Tensor& q, const Tensor& r, const Tensor* q_bar, const Tensor* r_bar) {
  const std::size_t n = q.rows();
  Tensor rbrt({n, n});
  if (r_bar != nullptr) rbrt = scalabl::matmul(*r_bar, r.transposed());
  Tensor nmat = -1.0 * rbrt;
  if (q_bar != nullptr) nmat = nmat + scalabl::matmul(q.transposed(), *q_bar);
  Tensor inner = rbrt;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) inner(i, j) += nmat(i, j) - nmat(j, i);
  Tensor left = scalabl::matmul(q, inner);
  // left * R^{-T} = (R^{-1} left^T)^T
  return solve_upper(r, left.transposed()).transposed();
}

}  // namespace

std::pair<Var, Var> qr(const Var& m) {
  QrResult f = scalabl::qr(m.value());
  for (std::size_t i = 0; i < f.r.rows(); ++i) {
    if (std::abs(f.r(i, i)) < 1e-300) throw NumericError("qr: singular input, cannot differentiate");
  }
  auto qv = std::make_shared<Tensor>(f.q);
  auto rv = std::make_shared<Tensor>(f.r);
  Var q = m.tape().record(f.q, {m}, [m, qv, rv](Tape& t, const Tensor& g) {
    t.accumulate(m, qr_backward(*qv, *rv, &g, nullptr));
  }, "qr");
  Var r = m.tape().record(f.r, {m}, [m, qv, rv](Tape& t, const Tensor& g) {
    t.accumulate(m, qr_backward(*qv, *rv, nullptr, &g));
  }, "qr");
  return {q, r};
}

Var cholesky(const Var& m) {
  auto l = std::make_shared<Tensor>(scalabl::cholesky(m.value()));
  return m.tape().record(*l, {m}, [m, l](Tape& t, const Tensor& g) {
    // A_bar = sym(L^{-T} Phi(L^T L_bar) L^{-1}), Phi = lower triangle with halved diagonal.
    const std::size_t n = l->rows();
    Tensor phi = scalabl::matmul(l->transposed(), g);
    for (std::size_t i = 0; i < n; ++i) {
      phi(i, i) *= 0.5;
      for (std::size_t j = i + 1; j < n; ++j) phi(i, j) = 0.0;
    }
    // X = L^{-T} phi  => L^T X = phi ; then S = X L^{-1} => L^T S^T = X^T.
    const Tensor lt = l->transposed();
    Tensor x = solve_upper(lt, phi);
    Tensor s = solve_upper(lt, x.transposed()).transposed();
    Tensor sym = 0.5 * (s + s.transposed());
    t.accumulate(m, sym);
  }, "cholesky");
}

}  // namespace scalabl::ad
