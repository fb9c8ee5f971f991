// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "moile/check.hpp"

namespace moile {

// Dense row-major double matrix. The one numeric carrier used everywhere.
// Zero-sized matrices (rows or cols == 0) are valid and behave like empty
// factors in products.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {
        MOILE_REQUIRE(r >= 0 && c >= 0, "Matrix: negative dimension");
    }
    Matrix(int r, int c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
        MOILE_REQUIRE(data.size() == static_cast<size_t>(r) * c, "Matrix: data length != rows*cols");
    }

    double& at(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
    double at(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }

    bool empty() const { return rows == 0 || cols == 0; }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    static Matrix zeros(int r, int c) { return Matrix(r, c); }
    static Matrix identity(int n);
    static Matrix column(const std::vector<double>& v);
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& m, double s);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix hstack(const Matrix& a, const Matrix& b);
Matrix vstack(const Matrix& a, const Matrix& b);

double frob_norm_sq(const Matrix& m);
double frob_norm(const Matrix& m);
double max_abs_diff(const Matrix& a, const Matrix& b);

bool all_finite(const Matrix& m);
void check_finite(const Matrix& m, const char* what);

// Numerically stable softmax (max-subtraction). Entries in (0,1], sum 1.
std::vector<double> softmax(const std::vector<double>& logits);

// Deterministic RNG helpers. The engine is the standardized mt19937_64;
// sampling (uniform, Box-Muller normal) is hand-rolled so results do not
// depend on the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }
    double uniform();                 // [0, 1)
    double normal();                  // N(0, 1)
    int uniform_int(int n);           // [0, n)

private:
    std::mt19937_64 gen_;
};

Matrix random_normal(int r, int c, double stddev, Rng& rng);

} // namespace moile
