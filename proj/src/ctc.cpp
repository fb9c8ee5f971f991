// SPDX-License-Identifier: Apache-2.0
#include "moile/ctc.hpp"

#include <cmath>

#include "moile/matrix.hpp"

namespace moile {

double squared_distance(const Embedding& a, const Embedding& b) {
    MOILE_REQUIRE(a.size() == b.size(), "squared_distance: dimension mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

ClusterState init_centers(const std::vector<Embedding>& first_batch, int m, uint64_t seed, double alpha) {
    MOILE_REQUIRE(m >= 1, "init_centers: need at least one cluster");
    MOILE_REQUIRE(static_cast<int>(first_batch.size()) >= m, "init_centers: batch smaller than cluster count");
    const size_t dim = first_batch[0].size();
    for (const Embedding& e : first_batch) {
        MOILE_REQUIRE(e.size() == dim, "init_centers: inconsistent embedding dimension");
        for (double v : e) MOILE_REQUIRE(std::isfinite(v), "init_centers: non-finite embedding");
    }

    Rng rng(seed);
    ClusterState st;
    st.alpha = alpha;
    st.dim = static_cast<int>(dim);
    std::vector<int> chosen;
    chosen.push_back(rng.uniform_int(static_cast<int>(first_batch.size())));
    while (static_cast<int>(chosen.size()) < m) {
        int best = -1;
        double best_d = -1.0;
        for (size_t i = 0; i < first_batch.size(); ++i) {
            double d = 1e300;
            for (int c : chosen) d = std::min(d, squared_distance(first_batch[i], first_batch[c]));
            if (d > best_d) {
                best_d = d;
                best = static_cast<int>(i);
            }
        }
        chosen.push_back(best);
    }
    for (int c : chosen) st.centers.push_back(first_batch[c]);
    st.initialized = true;
    return st;
}

int assign(const ClusterState& state, const Embedding& x) {
    MOILE_REQUIRE(state.initialized, "assign: cluster state not initialized");
    int best = 0;
    double best_d = squared_distance(x, state.centers[0]);
    for (int j = 1; j < state.cluster_count(); ++j) {
        const double d = squared_distance(x, state.centers[j]);
        if (d < best_d) {
            best_d = d;
            best = j;
        }
    }
    return best;
}

void update_centers(ClusterState& state, const std::vector<std::pair<const Embedding*, int>>& batch) {
    MOILE_REQUIRE(state.initialized, "update_centers: cluster state not initialized");
    const int m = state.cluster_count();
    std::vector<Embedding> residual(m, Embedding(state.dim, 0.0));
    std::vector<int> counts(m, 0);
    for (const auto& [x, j] : batch) {
        MOILE_REQUIRE(j >= 0 && j < m, "update_centers: assignment out of range");
        for (int d = 0; d < state.dim; ++d) residual[j][d] += (*x)[d] - state.centers[j][d];
        ++counts[j];
    }
    for (int j = 0; j < m; ++j) {
        if (counts[j] == 0) continue;
        const double f = state.alpha / counts[j];
        for (int d = 0; d < state.dim; ++d) state.centers[j][d] += f * residual[j][d];
    }
}

Embedding task_embedding(const ClusterState& state, const Embedding& x) {
    return state.centers[assign(state, x)];
}

} // namespace moile
