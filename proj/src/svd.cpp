// SPDX-License-Identifier: Apache-2.0
#include "moile/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace moile {

namespace {

// Orthogonalize columns of a (m x n, m >= n) in place by Jacobi plane
// rotations, accumulating them into v (n x n). On return the columns of a are
// mutually orthogonal with norms equal to the singular values.
void one_sided_jacobi(Matrix& a, Matrix& v) {
    const int m = a.rows;
    const int n = a.cols;
    const double tol = 1e-14;
    const int max_sweeps = 60;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n - 1; ++i) {
            for (int j = i + 1; j < n; ++j) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (int k = 0; k < m; ++k) {
                    const double ai = a.at(k, i), aj = a.at(k, j);
                    alpha += ai * ai;
                    beta += aj * aj;
                    gamma += ai * aj;
                }
                if (alpha == 0.0 || beta == 0.0) continue;
                const double denom = std::sqrt(alpha * beta);
                off = std::max(off, std::abs(gamma) / denom);
                if (std::abs(gamma) <= tol * denom) continue;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (int k = 0; k < m; ++k) {
                    const double ai = a.at(k, i), aj = a.at(k, j);
                    a.at(k, i) = c * ai - s * aj;
                    a.at(k, j) = s * ai + c * aj;
                }
                for (int k = 0; k < n; ++k) {
                    const double vi = v.at(k, i), vj = v.at(k, j);
                    v.at(k, i) = c * vi - s * vj;
                    v.at(k, j) = s * vi + c * vj;
                }
            }
        }
        if (off < tol) break;
    }
}

// Fill u columns whose singular value is negligible with an orthonormal
// completion, scanning standard basis vectors in index order.
void complete_basis(Matrix& u, const std::vector<bool>& valid) {
    const int m = u.rows;
    const int n = u.cols;
    for (int j = 0; j < n; ++j) {
        if (valid[j]) continue;
        for (int e = 0; e < m; ++e) {
            std::vector<double> cand(m, 0.0);
            cand[e] = 1.0;
            for (int c = 0; c < n; ++c) {
                if (c == j || (!valid[c] && c > j)) continue;
                double dot = 0.0;
                for (int k = 0; k < m; ++k) dot += cand[k] * u.at(k, c);
                for (int k = 0; k < m; ++k) cand[k] -= dot * u.at(k, c);
            }
            double norm = 0.0;
            for (double x : cand) norm += x * x;
            norm = std::sqrt(norm);
            if (norm > 0.5) {
                for (int k = 0; k < m; ++k) u.at(k, j) = cand[k] / norm;
                break;
            }
        }
    }
}

void fix_signs(Matrix& u, Matrix& v) {
    for (int j = 0; j < u.cols; ++j) {
        double lead = 0.0;
        for (int i = 0; i < u.rows; ++i) {
            if (u.at(i, j) != 0.0) {
                lead = u.at(i, j);
                break;
            }
        }
        if (lead < 0.0) {
            for (int i = 0; i < u.rows; ++i) u.at(i, j) = -u.at(i, j);
            for (int i = 0; i < v.rows; ++i) v.at(i, j) = -v.at(i, j);
        }
    }
}

// SVD of a tall-or-square matrix (rows >= cols).
SvdResult svd_tall(const Matrix& w) {
    const int m = w.rows;
    const int n = w.cols;
    Matrix a = w;
    Matrix v = Matrix::identity(n);
    one_sided_jacobi(a, v);

    std::vector<double> norms(n, 0.0);
    double smax = 0.0;
    for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int k = 0; k < m; ++k) s += a.at(k, j) * a.at(k, j);
        norms[j] = std::sqrt(s);
        smax = std::max(smax, norms[j]);
    }
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return norms[x] > norms[y]; });

    SvdResult out;
    out.u = Matrix(m, n);
    out.v = Matrix(n, n);
    out.s.resize(n);
    const double drop = smax * 1e-13;
    std::vector<bool> valid(n, false);
    for (int idx = 0; idx < n; ++idx) {
        const int j = order[idx];
        const double sj = norms[j];
        out.s[idx] = sj;
        for (int k = 0; k < n; ++k) out.v.at(k, idx) = v.at(k, j);
        if (sj > drop && sj > 0.0) {
            valid[idx] = true;
            for (int k = 0; k < m; ++k) out.u.at(k, idx) = a.at(k, j) / sj;
        } else {
            out.s[idx] = sj; // keep the tiny value; only the u column is rebuilt
        }
    }
    complete_basis(out.u, valid);
    fix_signs(out.u, out.v);
    return out;
}

} // namespace

SvdResult svd(const Matrix& w) {
    MOILE_REQUIRE(w.rows >= 1 && w.cols >= 1, "svd: empty matrix");
    check_finite(w, "svd input");
    if (w.rows >= w.cols) return svd_tall(w);
    SvdResult t = svd_tall(transpose(w));
    SvdResult out;
    out.u = std::move(t.v);
    out.v = std::move(t.u);
    out.s = std::move(t.s);
    fix_signs(out.u, out.v);
    return out;
}

void qr_thin(const Matrix& a, Matrix& q, Matrix& r) {
    const int m = a.rows;
    const int n = a.cols;
    MOILE_REQUIRE(m >= n, "qr_thin: requires rows >= cols");
    Matrix work = a;                     // reduced to R in place
    std::vector<std::vector<double>> hh; // householder vectors
    hh.reserve(n);
    for (int j = 0; j < n; ++j) {
        std::vector<double> vcol(m, 0.0);
        double norm = 0.0;
        for (int i = j; i < m; ++i) norm += work.at(i, j) * work.at(i, j);
        norm = std::sqrt(norm);
        const double x0 = work.at(j, j);
        const double alpha = (x0 >= 0.0 ? -norm : norm);
        double vnorm_sq = 0.0;
        if (norm > 0.0) {
            vcol[j] = x0 - alpha;
            for (int i = j + 1; i < m; ++i) vcol[i] = work.at(i, j);
            for (int i = j; i < m; ++i) vnorm_sq += vcol[i] * vcol[i];
        }
        if (vnorm_sq > 0.0) {
            for (int c = j; c < n; ++c) {
                double dot = 0.0;
                for (int i = j; i < m; ++i) dot += vcol[i] * work.at(i, c);
                const double f = 2.0 * dot / vnorm_sq;
                for (int i = j; i < m; ++i) work.at(i, c) -= f * vcol[i];
            }
        }
        hh.push_back(std::move(vcol));
    }
    r = Matrix(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) r.at(i, j) = work.at(i, j);
    // q = H_0 ... H_{n-1} applied to the first n identity columns
    q = Matrix(m, n);
    for (int j = 0; j < n; ++j) q.at(j, j) = 1.0;
    for (int h = n - 1; h >= 0; --h) {
        const std::vector<double>& vcol = hh[h];
        double vnorm_sq = 0.0;
        for (int i = h; i < m; ++i) vnorm_sq += vcol[i] * vcol[i];
        if (vnorm_sq == 0.0) continue;
        for (int c = 0; c < n; ++c) {
            double dot = 0.0;
            for (int i = h; i < m; ++i) dot += vcol[i] * q.at(i, c);
            const double f = 2.0 * dot / vnorm_sq;
            for (int i = h; i < m; ++i) q.at(i, c) -= f * vcol[i];
        }
    }
}

SvdResult svd_of_product(const Matrix& b, const Matrix& a) {
    MOILE_REQUIRE(b.cols == a.rows, "svd_of_product: inner dimensions differ");
    const int rank_bound = b.cols;
    if (rank_bound == 0) return SvdResult{Matrix(b.rows, 0), {}, Matrix(a.cols, 0)};
    MOILE_REQUIRE(b.rows >= rank_bound && a.cols >= rank_bound,
                  "svd_of_product: factors must be tall/wide low-rank");
    Matrix q1, r1, q2, r2;
    qr_thin(b, q1, r1);
    qr_thin(transpose(a), q2, r2);
    const Matrix core = matmul(r1, transpose(r2));
    SvdResult cs = svd(core);
    SvdResult out;
    out.u = matmul(q1, cs.u);
    out.v = matmul(q2, cs.v);
    out.s = std::move(cs.s);
    fix_signs(out.u, out.v);
    return out;
}

Matrix truncated_reconstruct(const SvdResult& f, int p) {
    MOILE_REQUIRE(p >= 0 && p <= static_cast<int>(f.s.size()), "truncated_reconstruct: bad p");
    Matrix w(f.u.rows, f.v.rows);
    for (int c = 0; c < p; ++c)
        for (int i = 0; i < w.rows; ++i) {
            const double us = f.u.at(i, c) * f.s[c];
            if (us == 0.0) continue;
            for (int j = 0; j < w.cols; ++j) w.at(i, j) += us * f.v.at(j, c);
        }
    return w;
}

} // namespace moile
