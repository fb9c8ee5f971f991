// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "moile/matrix.hpp"

namespace moile {

// Thin SVD of a d x k matrix: u is d x q with orthonormal columns, s holds q
// non-increasing non-negative singular values, v is k x q orthonormal,
// q = min(d, k). Deterministic: the first non-zero entry of each u column is
// non-negative.
struct SvdResult {
    Matrix u;
    std::vector<double> s;
    Matrix v;
};

// One-sided Jacobi. Accurate and dependency-free for the small matrices used
// here (a few hundred per side at most).
SvdResult svd(const Matrix& w);

// SVD of the product b*a (d x r times r x k, r <= min(d, k)) without forming
// the full d x k matrix: thin QR of both factors plus a Jacobi SVD of the
// r x r core. Returns q = r components; singular values beyond rank(b*a) are
// zero. Same sign convention as svd().
SvdResult svd_of_product(const Matrix& b, const Matrix& a);

// Householder thin QR of an m x n matrix with m >= n: q is m x n with
// orthonormal columns, r is n x n upper triangular, q*r == input.
void qr_thin(const Matrix& a, Matrix& q, Matrix& r);

// u_p * diag(s_p) * v_p^T using the leading p components.
Matrix truncated_reconstruct(const SvdResult& f, int p);

} // namespace moile
