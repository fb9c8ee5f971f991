// SPDX-License-Identifier: Apache-2.0
#include "moile/incremental.hpp"

#include <cmath>

namespace moile {

void ExpertAdapter::validate_shapes() const {
    MOILE_REQUIRE(b.cols == a.rows, "ExpertAdapter: factor inner dimensions differ");
    MOILE_REQUIRE(b.cols >= 1, "ExpertAdapter: rank must be positive");
    check_finite(b, "ExpertAdapter.b");
    check_finite(a, "ExpertAdapter.a");
}

void ExpertAdapter::validate() const {
    validate_shapes();
    MOILE_REQUIRE(rank() <= std::min(b.rows, a.cols) / 4,
                  "ExpertAdapter: rank too large for low-rank update");
}

double PartitionedAdapter::sigma_ref_total() const {
    double s = 0.0;
    for (double x : sigma_p) s += x * x;
    return std::sqrt(s);
}

namespace {

// Split an SVD into sqrt-balanced B/A factors over component range [c0, c1).
void factor_range(const SvdResult& fac, int c0, int c1, Matrix& b, Matrix& a) {
    const int d = fac.u.rows;
    const int k = fac.v.rows;
    b = Matrix(d, c1 - c0);
    a = Matrix(c1 - c0, k);
    for (int c = c0; c < c1; ++c) {
        const double root = std::sqrt(fac.s[c]);
        for (int i = 0; i < d; ++i) b.at(i, c - c0) = fac.u.at(i, c) * root;
        for (int j = 0; j < k; ++j) a.at(c - c0, j) = root * fac.v.at(j, c);
    }
}

PartitionedAdapter partition_factors(const Matrix& b, const Matrix& a, int p, ExpertLevel level) {
    const int r = b.cols;
    MOILE_REQUIRE(p >= 0 && p <= r, "partition: p out of [0, r]");
    SvdResult fac = svd_of_product(b, a);
    PartitionedAdapter pa;
    pa.level = level;
    pa.rank = r;
    pa.retained = p;
    Matrix bres, ares;
    factor_range(fac, 0, p, pa.bp, pa.ap);
    factor_range(fac, p, r, bres, ares);
    pa.b_res = Param("b_res", std::move(bres));
    pa.a_res = Param("a_res", std::move(ares));
    pa.sigma_p.assign(fac.s.begin(), fac.s.begin() + p);
    return pa;
}

} // namespace

PartitionedAdapter partition_adapter(const ExpertAdapter& adapter, int p) {
    adapter.validate_shapes();
    return partition_factors(adapter.b, adapter.a, p, adapter.level);
}

void repartition(PartitionedAdapter& pa, int p) {
    const Matrix b = stacked_b(pa);
    const Matrix a = stacked_a(pa);
    PartitionedAdapter next = partition_factors(b, a, p, pa.level);
    next.b_res.name = pa.b_res.name;
    next.a_res.name = pa.a_res.name;
    pa = std::move(next);
}

Matrix merged_weight(const PartitionedAdapter& pa) {
    Matrix w = matmul(stacked_b(pa), stacked_a(pa));
    return w;
}

Matrix stacked_b(const PartitionedAdapter& pa) {
    if (pa.retained == 0) return pa.b_res.value;
    if (!pa.has_residual()) return pa.bp;
    return hstack(pa.bp, pa.b_res.value);
}

Matrix stacked_a(const PartitionedAdapter& pa) {
    if (pa.retained == 0) return pa.a_res.value;
    if (!pa.has_residual()) return pa.ap;
    return vstack(pa.ap, pa.a_res.value);
}

double singular_value_loss(const PartitionedAdapter& pa) {
    if (pa.retained == 0) return 0.0;
    SvdResult fac = svd_of_product(stacked_b(pa), stacked_a(pa));
    double top = 0.0;
    for (int i = 0; i < pa.retained; ++i) top += fac.s[i] * fac.s[i];
    return std::abs(std::sqrt(top) - pa.sigma_ref_total());
}

double orthogonal_loss(const PartitionedAdapter& pa) {
    if (pa.retained == 0 || !pa.has_residual()) return 0.0;
    const Matrix overlap = matmul(pa.a_res.value, transpose(pa.ap));
    return frob_norm_sq(overlap);
}

Tape::NodeId singular_value_loss_node(StepContext& ctx, PartitionedAdapter& pa, double gap_tol) {
    Tape& t = ctx.tape;
    if (pa.retained == 0) return t.constant(Matrix(1, 1));
    if (!pa.has_residual()) {
        Matrix c(1, 1);
        c.at(0, 0) = singular_value_loss(pa);
        return t.constant(std::move(c));
    }
    const Matrix b_stack = stacked_b(pa);
    const Matrix a_stack = stacked_a(pa);
    Tape::NodeId principal = t.matmul(ctx.frozen_leaf(pa.bp), ctx.frozen_leaf(pa.ap));
    Tape::NodeId residual = t.matmul(ctx.param_leaf(pa.b_res), ctx.param_leaf(pa.a_res));
    Tape::NodeId merged = t.add(principal, residual);
    return t.singular_drift(merged, b_stack, a_stack, pa.sigma_ref_total(), pa.retained, gap_tol);
}

Tape::NodeId orthogonal_loss_node(StepContext& ctx, PartitionedAdapter& pa) {
    Tape& t = ctx.tape;
    if (pa.retained == 0 || !pa.has_residual()) return t.constant(Matrix(1, 1));
    Tape::NodeId overlap = t.matmul(ctx.param_leaf(pa.a_res), t.constant(transpose(pa.ap)));
    return t.frob_sq(overlap);
}

int choose_retained_rank(const std::vector<double>& sigma, int rank, const PPolicy& policy) {
    MOILE_REQUIRE(static_cast<int>(sigma.size()) >= rank, "choose_retained_rank: spectrum shorter than rank");
    if (policy.kind == PPolicy::Kind::half) return (rank + 1) / 2;
    double total = 0.0;
    for (int i = 0; i < rank; ++i) total += sigma[i] * sigma[i];
    if (total == 0.0) return (rank + 1) / 2;
    double acc = 0.0;
    for (int p = 1; p <= rank; ++p) {
        acc += sigma[p - 1] * sigma[p - 1];
        if (acc >= policy.energy_tau * total) return p;
    }
    return rank;
}

} // namespace moile
