// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "moile/matrix.hpp"
#include "moile/metrics.hpp"

#include <algorithm>

using namespace moile;

namespace {

// Independent double-loop recomputation, spreadsheet style.
double oracle_aa(const AccuracyMatrix& m) {
    double s = 0.0;
    for (double a : m.rows.back()) s += a;
    return s / m.rows.size();
}

double oracle_fm(const AccuracyMatrix& m) {
    const int t_count = static_cast<int>(m.rows.size());
    if (t_count == 1) return 0.0;
    double total = 0.0;
    for (int t = 0; t < t_count - 1; ++t) {
        double best = -1e300;
        for (int i = 0; i < t_count - 1; ++i)
            if (i >= t) best = std::max(best, m.rows[i][t]);
        total += best - m.rows[t_count - 1][t];
    }
    return total / (t_count - 1);
}

AccuracyMatrix random_matrix(int t_count, Rng& rng) {
    AccuracyMatrix m;
    for (int i = 0; i < t_count; ++i) {
        std::vector<double> row(i + 1);
        for (double& v : row) v = rng.uniform();
        m.append_row(std::move(row));
    }
    return m;
}

} // namespace

TEST_CASE("average accuracy trivial cases") {
    AccuracyMatrix m;
    m.append_row({0.8});
    CHECK(average_accuracy(m) == doctest::Approx(0.8));
    m.append_row({0.6, 0.7});
    CHECK(average_accuracy(m) == doctest::Approx(0.65));
}

TEST_CASE("forgetting measure hand case") {
    AccuracyMatrix m;
    m.append_row({0.8});
    CHECK(forgetting_measure(m) == 0.0);
    m.append_row({0.6, 0.7});
    CHECK(forgetting_measure(m) == doctest::Approx(0.2));
}

TEST_CASE("no forgetting when accuracies never drop") {
    AccuracyMatrix m;
    m.append_row({0.5});
    m.append_row({0.5, 0.6});
    m.append_row({0.5, 0.6, 0.9});
    CHECK(forgetting_measure(m) == doctest::Approx(0.0));
}

TEST_CASE("backward transfer is not clamped") {
    AccuracyMatrix m;
    m.append_row({0.5});
    m.append_row({0.9, 0.6});
    CHECK(forgetting_measure(m) == doctest::Approx(-0.4));
}

TEST_CASE("metrics match the double-loop oracle on random matrices") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        AccuracyMatrix m = random_matrix(2 + rng.uniform_int(6), rng);
        CHECK(average_accuracy(m) == oracle_aa(m));
        CHECK(forgetting_measure(m) == oracle_fm(m));
    }
}

TEST_CASE("average accuracy is invariant under permuting the final row") {
    Rng rng(23);
    AccuracyMatrix m = random_matrix(5, rng);
    double aa = average_accuracy(m);
    std::vector<double> perm = m.rows.back();
    std::rotate(perm.begin(), perm.begin() + 2, perm.end());
    AccuracyMatrix m2 = m;
    m2.rows.back() = perm;
    CHECK(average_accuracy(m2) == doctest::Approx(aa).epsilon(1e-15));
}

TEST_CASE("malformed matrices are rejected") {
    AccuracyMatrix m;
    CHECK_THROWS_AS(average_accuracy(m), ContractViolation);
    CHECK_THROWS_AS(m.append_row({0.1, 0.2}), ContractViolation);
    CHECK_THROWS_AS(m.append_row({1.5}), ContractViolation);
    AccuracyMatrix bad;
    bad.rows = {{0.5}, {0.5}};
    CHECK_THROWS_AS(forgetting_measure(bad), ContractViolation);
}
