// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "moile/check.hpp"

namespace moile {

using Embedding = std::vector<double>;

// Online cluster centers over fused visual-text embeddings. Centers move by
// batch residual means scaled by alpha; the assigned center doubles as the
// task embedding handed to the task-level router.
struct ClusterState {
    std::vector<Embedding> centers;
    double alpha = 0.1;
    int dim = 0;
    bool initialized = false;

    int cluster_count() const { return static_cast<int>(centers.size()); }
};

// Farthest-point seeding from the first batch. The starting point is picked
// by the seed; subsequent centers maximize the distance to those already
// chosen (ties at equal distance go to the lower index).
ClusterState init_centers(const std::vector<Embedding>& first_batch, int m, uint64_t seed,
                          double alpha = 0.1);

// Nearest center by squared Euclidean distance, ties to the lowest index.
int assign(const ClusterState& state, const Embedding& x);

// One online update step: c_j += alpha/|S_j| * sum_{x in S_j} (x - c_j).
// Centers with no assigned samples stay put.
void update_centers(ClusterState& state, const std::vector<std::pair<const Embedding*, int>>& batch);

// The assigned center vector. Not differentiated through.
Embedding task_embedding(const ClusterState& state, const Embedding& x);

double squared_distance(const Embedding& a, const Embedding& b);

} // namespace moile
