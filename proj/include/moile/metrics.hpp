// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "moile/check.hpp"

namespace moile {

// Lower-triangular record of task accuracies: rows[i][t] is the accuracy on
// task t (0-based) after training task i, defined for t <= i.
struct AccuracyMatrix {
    std::vector<std::vector<double>> rows;

    int tasks() const { return static_cast<int>(rows.size()); }
    void append_row(std::vector<double> row);
    void validate() const;
};

// Mean accuracy over all tasks after the final one.
double average_accuracy(const AccuracyMatrix& m);

// Mean over earlier tasks of the peak-minus-final accuracy drop. Zero for a
// single task. Negative per-task values (backward transfer) are not clamped.
double forgetting_measure(const AccuracyMatrix& m);

} // namespace moile
