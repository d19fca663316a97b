// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "scalabl/autodiff.hpp"

/// Differentiable operations over Tape variables. Every op validates shapes,
/// throws NumericError if its output is not finite, and records a backward
/// rule on the operands' tape.
namespace scalabl::ad {

Var matmul(const Var& a, const Var& b);
/// a * b^T without materializing the transpose.
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& a);
Var reshape(const Var& a, Shape shape);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

/// x[m x n] + v[n] broadcast across rows.
Var add_rowvec(const Var& x, const Var& v);
/// x[m x n] * v[n] broadcast across rows.
Var mul_rowvec(const Var& x, const Var& v);

Var exp(const Var& a);
Var log(const Var& a);
Var relu(const Var& a);
Var tanh(const Var& a);

Var diag_embed(const Var& v);
Var softmax_rows(const Var& x);
/// Row-wise normalization to zero mean and unit variance (no affine part).
Var layer_norm_rows(const Var& x, double eps = 1e-5);
/// Mean cross-entropy of row-wise logits against integer targets.
Var cross_entropy(const Var& logits, std::span<const int> targets);

Var sum(const Var& a);
Var mean(const Var& a);

Var slice_rows(const Var& x, std::size_t begin, std::size_t end);
Var slice_cols(const Var& x, std::size_t begin, std::size_t end);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
/// Rows of `table` selected by `ids` (embedding lookup).
Var gather_rows(const Var& table, std::span<const int> ids);
/// Averages consecutive blocks of `seq_len` rows: [(b*T) x d] -> [b x d].
Var mean_pool(const Var& x, std::size_t seq_len);

/// Multi-head scaled dot-product attention over packed sequences. q, k, v are
/// [(b*T) x d]; heads split the columns evenly. No masking.
Var attention(const Var& q, const Var& k, const Var& v, std::size_t seq_len,
              std::size_t num_heads);

/// QR with diag(R) >= 0; both factors are differentiable (square, full rank).
std::pair<Var, Var> qr(const Var& m);
/// Cholesky factor of the symmetric part of m; gradient is symmetric.
Var cholesky(const Var& m);

}  // namespace scalabl::ad
