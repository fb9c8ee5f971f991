// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "moile/params.hpp"
#include "moile/svd.hpp"

namespace moile {

enum class ExpertLevel { token, task };

// A plain LoRA pair before any partitioning.
struct ExpertAdapter {
    Matrix b; // d x r
    Matrix a; // r x k
    ExpertLevel level = ExpertLevel::token;

    int rank() const { return b.cols; }
    void validate_shapes() const; // factor consistency and finiteness
    void validate() const;        // also enforces the low-rank bound r <= min(d,k)/4
};

// LoRA expert split into a frozen principal part (top-p singular directions
// of the weight at the last task boundary) and a trainable residual part.
// Before the first boundary retained == 0 and the whole update is residual.
struct PartitionedAdapter {
    Matrix bp;                  // d x p, frozen
    Matrix ap;                  // p x k, frozen
    Param b_res;                // d x (r-p), trainable
    Param a_res;                // (r-p) x k, trainable
    std::vector<double> sigma_p; // reference singular values at the boundary
    int rank = 0;               // r
    int retained = 0;           // p
    ExpertLevel level = ExpertLevel::token;

    int d() const { return retained > 0 ? bp.rows : b_res.value.rows; }
    int k() const { return retained > 0 ? ap.cols : a_res.value.cols; }
    bool has_residual() const { return rank > retained; }

    // sqrt(sum of squared reference singular values), the fixed side of the
    // singular-value drift.
    double sigma_ref_total() const;
};

// Balanced square-root split of the rank-p truncated SVD and the remaining
// components p+1..r: bp*ap reproduces the truncation, and the two halves sum
// back to b*a exactly (within SVD accuracy).
PartitionedAdapter partition_adapter(const ExpertAdapter& adapter, int p);

// Re-runs the partition on the adapter's current merged weight, replacing
// the previous principal/residual split and refreshing sigma_p.
void repartition(PartitionedAdapter& pa, int p);

// bp*ap + b_res*a_res as a value.
Matrix merged_weight(const PartitionedAdapter& pa);

// Stacked factors whose product equals the merged weight.
Matrix stacked_b(const PartitionedAdapter& pa);
Matrix stacked_a(const PartitionedAdapter& pa);

// Loss values without a tape (reports and tests).
double singular_value_loss(const PartitionedAdapter& pa);
double orthogonal_loss(const PartitionedAdapter& pa);

// Tape nodes for training. Both return a 1x1 scalar; they return a zero
// constant when the adapter has no principal part (or no residual, for the
// orthogonal loss).
Tape::NodeId singular_value_loss_node(StepContext& ctx, PartitionedAdapter& pa, double gap_tol = 1e-8);
Tape::NodeId orthogonal_loss_node(StepContext& ctx, PartitionedAdapter& pa);

// L + lambda1 * sum(Ls) + lambda2 * sum(Lo), the training objective.
inline double total_loss(double task_loss, double sum_ls, double sum_lo, double lambda1, double lambda2) {
    return task_loss + lambda1 * sum_ls + lambda2 * sum_lo;
}

struct PPolicy {
    enum class Kind { half, energy } kind = Kind::half;
    double energy_tau = 0.5;
};

// Retained-rank choice from the current spectrum.
int choose_retained_rank(const std::vector<double>& sigma, int rank, const PPolicy& policy);

} // namespace moile
