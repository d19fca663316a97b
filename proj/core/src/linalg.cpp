// SPDX-License-Identifier: Apache-2.0
#include "scalabl/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scalabl/errors.hpp"

namespace scalabl {

namespace {

double row_dot(const Tensor& m, std::size_t p, std::size_t q) {
  const std::size_t d = m.cols();
  double acc = 0.0;
  for (std::size_t k = 0; k < d; ++k) acc += m(p, k) * m(q, k);
  return acc;
}

void rotate_rows(Tensor& m, std::size_t p, std::size_t q, double c, double s) {
  const std::size_t d = m.cols();
  for (std::size_t k = 0; k < d; ++k) {
    const double a = m(p, k), b = m(q, k);
    m(p, k) = c * a - s * b;
    m(q, k) = s * a + c * b;
  }
}

void require_square(const Tensor& m, const char* op) {
  if (m.rank() != 2 || m.rows() != m.cols()) {
    throw ShapeError(std::string(op) + " expects a square matrix, got " + shape_str(m.shape()));
  }
}

}  // namespace

SvdResult svd_truncated(const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("svd_truncated expects a matrix");
  const std::size_t r = m.rows(), d = m.cols();
  if (r == 0 || r > d) {
    throw ShapeError("svd_truncated needs 0 < rows <= cols, got " + shape_str(m.shape()));
  }
  require_finite(m, "svd_truncated input");

  // Orthogonalize rows of W = J m; at convergence W = diag(s) V and m = J^T W.
  Tensor w = m;
  Tensor j = Tensor::eye(r);
  constexpr double kTol = 1e-15;
  for (int sweep = 0; sweep < 100; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < r; ++p) {
      for (std::size_t q = p + 1; q < r; ++q) {
        const double alpha = row_dot(w, p, p);
        const double beta = row_dot(w, q, q);
        const double gamma = row_dot(w, p, q);
        if (std::abs(gamma) <= kTol * std::sqrt(alpha * beta) || gamma == 0.0) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate_rows(w, p, q, c, s);
        rotate_rows(j, p, q, c, s);
      }
    }
    if (!rotated) break;
  }

  std::vector<double> norms(r);
  for (std::size_t i = 0; i < r; ++i) norms[i] = std::sqrt(row_dot(w, i, i));
  std::vector<std::size_t> order(r);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });

  SvdResult out{Tensor({r, r}), Tensor({r}), Tensor({r, d})};
  const double cutoff = std::max(norms[order[0]], 1.0) * 1e-13;
  std::size_t basis_next = 0;
  for (std::size_t k = 0; k < r; ++k) {
    const std::size_t src = order[k];
    out.s[k] = norms[src];
    for (std::size_t i = 0; i < r; ++i) out.u(i, k) = j(src, i);
    if (norms[src] > cutoff) {
      for (std::size_t c = 0; c < d; ++c) out.v(k, c) = w(src, c) / norms[src];
      continue;
    }
    // Null direction: complete V with a unit vector orthogonal to earlier rows.
    for (; basis_next < d; ++basis_next) {
      std::vector<double> cand(d, 0.0);
      cand[basis_next] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t prev = 0; prev < k; ++prev) {
          double dot = 0.0;
          for (std::size_t c = 0; c < d; ++c) dot += cand[c] * out.v(prev, c);
          for (std::size_t c = 0; c < d; ++c) cand[c] -= dot * out.v(prev, c);
        }
      }
      double nrm = 0.0;
      for (double x : cand) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm > 1e-6) {
        for (std::size_t c = 0; c < d; ++c) out.v(k, c) = cand[c] / nrm;
        ++basis_next;
        break;
      }
    }
  }

  for (std::size_t k = 0; k < r; ++k) {
    std::size_t arg = 0;
    for (std::size_t c = 1; c < d; ++c)
      if (std::abs(out.v(k, c)) > std::abs(out.v(k, arg))) arg = c;
    if (out.v(k, arg) < 0.0) {
      for (std::size_t c = 0; c < d; ++c) out.v(k, c) = -out.v(k, c);
      for (std::size_t i = 0; i < r; ++i) out.u(i, k) = -out.u(i, k);
    }
  }
  return out;
}

QrResult qr(const Tensor& m) {
  require_square(m, "qr");
  require_finite(m, "qr input");
  const std::size_t n = m.rows();
  Tensor r = m;
  Tensor q = Tensor::eye(n);
  std::vector<double> v(n);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    double norm = 0.0;
    for (std::size_t i = k; i < n; ++i) norm += r(i, k) * r(i, k);
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    const double alpha = r(k, k) > 0.0 ? -norm : norm;
    std::fill(v.begin(), v.end(), 0.0);
    for (std::size_t i = k; i < n; ++i) v[i] = r(i, k);
    v[k] -= alpha;
    double vnorm2 = 0.0;
    for (std::size_t i = k; i < n; ++i) vnorm2 += v[i] * v[i];
    if (vnorm2 == 0.0) continue;
    // R <- H R, Q <- Q H with H = I - 2 v v^T / (v^T v).
    for (std::size_t c = 0; c < n; ++c) {
      double dot = 0.0;
      for (std::size_t i = k; i < n; ++i) dot += v[i] * r(i, c);
      const double f = 2.0 * dot / vnorm2;
      for (std::size_t i = k; i < n; ++i) r(i, c) -= f * v[i];
    }
    for (std::size_t row = 0; row < n; ++row) {
      double dot = 0.0;
      for (std::size_t i = k; i < n; ++i) dot += q(row, i) * v[i];
      const double f = 2.0 * dot / vnorm2;
      for (std::size_t i = k; i < n; ++i) q(row, i) -= f * v[i];
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) r(i, j) = 0.0;
    if (r(i, i) < 0.0) {
      for (std::size_t c = 0; c < n; ++c) r(i, c) = -r(i, c);
      for (std::size_t row = 0; row < n; ++row) q(row, i) = -q(row, i);
    }
  }
  return {std::move(q), std::move(r)};
}

Tensor cholesky(const Tensor& sigma) {
  require_square(sigma, "cholesky");
  require_finite(sigma, "cholesky input");
  const std::size_t n = sigma.rows();
  Tensor l({n, n});
  for (std::size_t j = 0; j < n; ++j) {
    double diag = sigma(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (!(diag > 0.0)) throw NotPositiveDefinite(j, diag);
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double acc = 0.5 * (sigma(i, j) + sigma(j, i));
      for (std::size_t k = 0; k < j; ++k) acc -= l(i, k) * l(j, k);
      l(i, j) = acc / ljj;
    }
  }
  return l;
}

Tensor solve_lower(const Tensor& l, const Tensor& b) {
  require_square(l, "solve_lower");
  const std::size_t n = l.rows();
  if (b.rank() != 2 || b.rows() != n) throw ShapeError("solve_lower right-hand side mismatch");
  const std::size_t m = b.cols();
  Tensor x = b;
  for (std::size_t c = 0; c < m; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = x(i, c);
      for (std::size_t k = 0; k < i; ++k) acc -= l(i, k) * x(k, c);
      x(i, c) = acc / l(i, i);
    }
  }
  return x;
}

Tensor solve_upper(const Tensor& u, const Tensor& b) {
  require_square(u, "solve_upper");
  const std::size_t n = u.rows();
  if (b.rank() != 2 || b.rows() != n) throw ShapeError("solve_upper right-hand side mismatch");
  const std::size_t m = b.cols();
  Tensor x = b;
  for (std::size_t c = 0; c < m; ++c) {
    for (std::size_t ii = n; ii-- > 0;) {
      double acc = x(ii, c);
      for (std::size_t k = ii + 1; k < n; ++k) acc -= u(ii, k) * x(k, c);
      x(ii, c) = acc / u(ii, ii);
    }
  }
  return x;
}

}  // namespace scalabl
