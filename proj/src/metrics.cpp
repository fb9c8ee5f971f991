// SPDX-License-Identifier: Apache-2.0
#include "moile/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace moile {

void AccuracyMatrix::append_row(std::vector<double> row) {
    MOILE_REQUIRE(row.size() == rows.size() + 1, "AccuracyMatrix: row length must equal row index + 1");
    for (double a : row) MOILE_REQUIRE(std::isfinite(a) && a >= 0.0 && a <= 1.0, "AccuracyMatrix: entry outside [0,1]");
    rows.push_back(std::move(row));
}

void AccuracyMatrix::validate() const {
    for (size_t i = 0; i < rows.size(); ++i) {
        MOILE_REQUIRE(rows[i].size() == i + 1, "AccuracyMatrix: not lower-triangular");
        for (double a : rows[i])
            MOILE_REQUIRE(std::isfinite(a) && a >= 0.0 && a <= 1.0, "AccuracyMatrix: entry outside [0,1]");
    }
}

double average_accuracy(const AccuracyMatrix& m) {
    const int t_count = m.tasks();
    MOILE_REQUIRE(t_count >= 1, "average_accuracy: empty matrix");
    m.validate();
    const std::vector<double>& last = m.rows.back();
    double sum = 0.0;
    for (double a : last) sum += a;
    return sum / t_count;
}

double forgetting_measure(const AccuracyMatrix& m) {
    const int t_count = m.tasks();
    MOILE_REQUIRE(t_count >= 1, "forgetting_measure: empty matrix");
    m.validate();
    if (t_count == 1) return 0.0;
    double sum = 0.0;
    for (int t = 0; t < t_count - 1; ++t) {
        // Row i holds task t only for i >= t, so the max runs over i in [t, T-2].
        double best = -1e300;
        for (int i = t; i <= t_count - 2; ++i) best = std::max(best, m.rows[i][t]);
        sum += best - m.rows[t_count - 1][t];
    }
    return sum / (t_count - 1);
}

} // namespace moile
