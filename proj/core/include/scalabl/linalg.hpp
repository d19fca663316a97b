// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "scalabl/tensor.hpp"

namespace scalabl {

struct SvdResult {
  Tensor u;       // r x r, orthonormal columns
  Tensor s;       // r, nonnegative, descending
  Tensor v;       // r x d, orthonormal rows
};

/// Thin SVD of a wide matrix (r <= d) by one-sided Jacobi rotations on rows.
/// Each row of V has its largest-magnitude entry made nonnegative.
SvdResult svd_truncated(const Tensor& m);

struct QrResult {
  Tensor q;
  Tensor r;
};

/// Householder QR of a square matrix, normalized so diag(R) >= 0.
QrResult qr(const Tensor& m);

/// Lower Cholesky factor of the symmetric part of `sigma`.
/// Throws NotPositiveDefinite with the failing pivot index.
Tensor cholesky(const Tensor& sigma);

/// Solves L X = B for lower-triangular L.
Tensor solve_lower(const Tensor& l, const Tensor& b);
/// Solves U X = B for upper-triangular U.
Tensor solve_upper(const Tensor& u, const Tensor& b);

}  // namespace scalabl
