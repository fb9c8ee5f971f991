// SPDX-License-Identifier: Apache-2.0
#include "moile/matrix.hpp"

#include <algorithm>
#include <cmath>

namespace moile {

Matrix Matrix::identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

Matrix Matrix::column(const std::vector<double>& v) {
    Matrix m(static_cast<int>(v.size()), 1);
    m.data = v;
    return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    MOILE_REQUIRE(a.cols == b.rows, "matmul: inner dimensions differ");
    Matrix c(a.rows, b.cols);
    // ikj order keeps the inner loop contiguous for both b and c.
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + static_cast<size_t>(i) * a.cols;
        double* crow = c.data.data() + static_cast<size_t>(i) * c.cols;
        for (int k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.data.data() + static_cast<size_t>(k) * b.cols;
            for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols, m.rows);
    for (int i = 0; i < m.rows; ++i)
        for (int j = 0; j < m.cols; ++j) t.at(j, i) = m.at(i, j);
    return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
    MOILE_REQUIRE(a.same_shape(b), "add: shape mismatch");
    Matrix c = a;
    for (size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
    return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    MOILE_REQUIRE(a.same_shape(b), "sub: shape mismatch");
    Matrix c = a;
    for (size_t i = 0; i < c.data.size(); ++i) c.data[i] -= b.data[i];
    return c;
}

Matrix scale(const Matrix& m, double s) {
    Matrix c = m;
    for (double& x : c.data) x *= s;
    return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    MOILE_REQUIRE(a.same_shape(b), "hadamard: shape mismatch");
    Matrix c = a;
    for (size_t i = 0; i < c.data.size(); ++i) c.data[i] *= b.data[i];
    return c;
}

Matrix hstack(const Matrix& a, const Matrix& b) {
    if (a.empty() && a.rows == 0) return b;
    if (b.empty() && b.rows == 0) return a;
    MOILE_REQUIRE(a.rows == b.rows, "hstack: row count mismatch");
    Matrix c(a.rows, a.cols + b.cols);
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < a.cols; ++j) c.at(i, j) = a.at(i, j);
        for (int j = 0; j < b.cols; ++j) c.at(i, a.cols + j) = b.at(i, j);
    }
    return c;
}

Matrix vstack(const Matrix& a, const Matrix& b) {
    if (a.empty() && a.cols == 0) return b;
    if (b.empty() && b.cols == 0) return a;
    MOILE_REQUIRE(a.cols == b.cols, "vstack: column count mismatch");
    Matrix c(a.rows + b.rows, a.cols);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) c.at(i, j) = a.at(i, j);
    for (int i = 0; i < b.rows; ++i)
        for (int j = 0; j < b.cols; ++j) c.at(a.rows + i, j) = b.at(i, j);
    return c;
}

double frob_norm_sq(const Matrix& m) {
    double s = 0.0;
    for (double x : m.data) s += x * x;
    return s;
}

double frob_norm(const Matrix& m) { return std::sqrt(frob_norm_sq(m)); }

double max_abs_diff(const Matrix& a, const Matrix& b) {
    MOILE_REQUIRE(a.same_shape(b), "max_abs_diff: shape mismatch");
    double d = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) d = std::max(d, std::abs(a.data[i] - b.data[i]));
    return d;
}

bool all_finite(const Matrix& m) {
    for (double x : m.data)
        if (!std::isfinite(x)) return false;
    return true;
}

void check_finite(const Matrix& m, const char* what) {
    MOILE_REQUIRE(all_finite(m), std::string(what) + ": non-finite entries");
}

std::vector<double> softmax(const std::vector<double>& logits) {
    MOILE_REQUIRE(!logits.empty(), "softmax: empty input");
    double mx = logits[0];
    for (double x : logits) {
        MOILE_REQUIRE(std::isfinite(x), "softmax: non-finite logit");
        mx = std::max(mx, x);
    }
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (double& x : out) x /= sum;
    return out;
}

double Rng::uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
    const double u1 = 1.0 - uniform(); // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

int Rng::uniform_int(int n) {
    MOILE_REQUIRE(n > 0, "uniform_int: n must be positive");
    return static_cast<int>(uniform() * n);
}

Matrix random_normal(int r, int c, double stddev, Rng& rng) {
    Matrix m(r, c);
    for (double& x : m.data) x = stddev * rng.normal();
    return m;
}

} // namespace moile
