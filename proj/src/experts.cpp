// SPDX-License-Identifier: Apache-2.0
#include "moile/experts.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace moile {

TokenRoute route_tokens(const Matrix& router_weight, const std::vector<double>& x, int k) {
    const int n = router_weight.rows;
    MOILE_REQUIRE(k >= 1 && k <= n, "route_tokens: K out of range");
    MOILE_REQUIRE(router_weight.cols == static_cast<int>(x.size()), "route_tokens: input dim mismatch");
    std::vector<double> logits(n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < router_weight.cols; ++j) logits[i] += router_weight.at(i, j) * x[j];
    std::vector<double> probs = softmax(logits);

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs[a] > probs[b]; });

    TokenRoute out;
    out.gates.assign(n, 0.0);
    out.selected.assign(order.begin(), order.begin() + k);
    std::sort(out.selected.begin(), out.selected.end());
    for (int i : out.selected) out.gates[i] = probs[i];
    return out;
}

TaskRoute route_task(const Matrix& router_weight, const Embedding& e) {
    TokenRoute top1 = route_tokens(router_weight, e, 1);
    return TaskRoute{top1.selected[0], top1.gates[top1.selected[0]]};
}

Matrix expert_forward(const ExpertAdapter& adapter, const Matrix& x) {
    MOILE_REQUIRE(adapter.a.cols == x.rows, "expert_forward: x rows must equal adapter k");
    return matmul(adapter.b, matmul(adapter.a, x));
}

void MoileLayer::validate() const {
    if (single_shared) {
        MOILE_REQUIRE(token_experts.size() == 1 && task_experts.empty(),
                      "MoileLayer: single_shared holds exactly one adapter");
        return;
    }
    MOILE_REQUIRE(top_k >= 1 && top_k <= static_cast<int>(token_experts.size()),
                  "MoileLayer: top_k out of range");
    MOILE_REQUIRE(!task_experts.empty(), "MoileLayer: missing task experts");
    MOILE_REQUIRE(token_router.weight.value.rows == static_cast<int>(token_experts.size()),
                  "MoileLayer: token router rows != N1");
    MOILE_REQUIRE(task_router.weight.value.rows == static_cast<int>(task_experts.size()),
                  "MoileLayer: task router rows != N2");
}

namespace {

// bp(ap x) + b_res(a_res x): residual factors are parameter leaves, principal
// factors constants. Skips empty halves.
Tape::NodeId adapter_apply(StepContext& ctx, PartitionedAdapter& pa, Tape::NodeId x) {
    Tape& t = ctx.tape;
    Tape::NodeId out = -1;
    if (pa.retained > 0) {
        out = t.matmul(ctx.frozen_leaf(pa.bp), t.matmul(ctx.frozen_leaf(pa.ap), x));
    }
    if (pa.has_residual()) {
        Tape::NodeId res =
            t.matmul(ctx.param_leaf(pa.b_res), t.matmul(ctx.param_leaf(pa.a_res), x));
        out = out < 0 ? res : t.add(out, res);
    }
    MOILE_REQUIRE(out >= 0, "adapter_apply: adapter with no factors");
    return out;
}

// Per-column top-k mask over probability values; ties to the lower index.
Matrix topk_mask(const Matrix& probs, int k) {
    Matrix mask(probs.rows, probs.cols);
    std::vector<int> order(probs.rows);
    for (int j = 0; j < probs.cols; ++j) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return probs.at(a, j) > probs.at(b, j); });
        for (int i = 0; i < k; ++i) mask.at(order[i], j) = 1.0;
    }
    return mask;
}

} // namespace

Tape::NodeId layer_forward(StepContext& ctx, MoileLayer& layer, Tape::NodeId x,
                           const Embedding& task_emb, const LayerForwardOpts& opts,
                           LayerTrace* trace) {
    Tape& t = ctx.tape;
    const Matrix& xv = t.value(x);
    MOILE_REQUIRE(xv.rows == layer.input_dim(), "layer_forward: input rows != k");
    Tape::NodeId w0_leaf = opts.train_base ? ctx.param_leaf(layer.w0) : ctx.frozen_leaf(layer.w0.value);
    Tape::NodeId acc = t.matmul(w0_leaf, x);
    if (!opts.adapters_active) return acc;

    if (layer.single_shared) {
        return t.add(acc, adapter_apply(ctx, layer.token_experts[0], x));
    }
    layer.validate();

    // token-level branch: softmax over experts per column, top-K gating
    const int n1 = static_cast<int>(layer.token_experts.size());
    Tape::NodeId plog = t.matmul(ctx.param_leaf(layer.token_router.weight), x);
    Tape::NodeId probs = t.colwise_softmax(plog);
    const Matrix mask = topk_mask(t.value(probs), layer.top_k);
    Tape::NodeId gated = t.hadamard(probs, t.constant(mask));
    for (int i = 0; i < n1; ++i) {
        bool any = false;
        for (int j = 0; j < mask.cols; ++j) any = any || mask.at(i, j) != 0.0;
        if (!any) continue;
        Tape::NodeId gate_row = t.slice_rows(gated, i, i + 1);
        Tape::NodeId contrib = t.rowwise_scale(adapter_apply(ctx, layer.token_experts[i], x), gate_row);
        acc = t.add(acc, contrib);
    }
    if (trace) {
        const Matrix& gv = t.value(gated);
        trace->positions = gv.cols;
        for (int j = 0; j < gv.cols; ++j)
            for (int i = 0; i < n1; ++i)
                if (mask.at(i, j) != 0.0) {
                    trace->token_expert.push_back(i);
                    trace->token_gate.push_back(gv.at(i, j));
                }
    }

    // task-level branch: top-1 over the task embedding, once per sample
    if (opts.use_task_branch) {
        MOILE_REQUIRE(static_cast<int>(task_emb.size()) == layer.task_router.weight.value.cols,
                      "layer_forward: task embedding dim mismatch");
        Tape::NodeId e_col = t.constant(Matrix::column(task_emb));
        Tape::NodeId qlog = t.matmul(ctx.param_leaf(layer.task_router.weight), e_col);
        Tape::NodeId q = t.colwise_softmax(qlog);
        const Matrix& qv = t.value(q);
        int best = 0;
        for (int i = 1; i < qv.rows; ++i)
            if (qv.at(i, 0) > qv.at(best, 0)) best = i;
        Tape::NodeId gate = t.slice_rows(q, best, best + 1); // 1x1
        Tape::NodeId contrib = t.scale_by(adapter_apply(ctx, layer.task_experts[best], x), gate);
        acc = t.add(acc, contrib);
        if (trace) {
            trace->task_branch_used = true;
            trace->task_expert = best;
            trace->task_gate = qv.at(best, 0);
        }
    }
    return acc;
}

MoileLayer make_moile_layer(int d, int k, int rank, int n_token, int n_task, int top_k, int d_embed,
                            double adapter_scale, double router_scale, Rng& rng) {
    MOILE_REQUIRE(rank <= std::min(d, k) / 4, "make_moile_layer: rank too large");
    MoileLayer layer;
    layer.w0 = Param("w0", Matrix(d, k));
    layer.top_k = top_k;
    auto fresh_adapter = [&](ExpertLevel level) {
        PartitionedAdapter pa;
        pa.level = level;
        pa.rank = rank;
        pa.retained = 0;
        pa.bp = Matrix(d, 0);
        pa.ap = Matrix(0, k);
        pa.b_res = Param("b_res", random_normal(d, rank, adapter_scale, rng));
        pa.a_res = Param("a_res", random_normal(rank, k, adapter_scale, rng));
        return pa;
    };
    for (int i = 0; i < n_token; ++i) layer.token_experts.push_back(fresh_adapter(ExpertLevel::token));
    for (int i = 0; i < n_task; ++i) layer.task_experts.push_back(fresh_adapter(ExpertLevel::task));
    layer.token_router = Router{Param("token_router", random_normal(n_token, k, router_scale, rng)),
                                ExpertLevel::token};
    layer.task_router = Router{Param("task_router", random_normal(n_task, d_embed, router_scale, rng)),
                               ExpertLevel::task};
    return layer;
}

MoileLayer make_single_adapter_layer(int d, int k, int rank, double adapter_scale, Rng& rng) {
    MoileLayer layer;
    layer.w0 = Param("w0", Matrix(d, k));
    layer.single_shared = true;
    PartitionedAdapter pa;
    pa.rank = rank;
    pa.retained = 0;
    pa.bp = Matrix(d, 0);
    pa.ap = Matrix(0, k);
    pa.b_res = Param("b_res", random_normal(d, rank, adapter_scale, rng));
    pa.a_res = Param("a_res", random_normal(rank, k, adapter_scale, rng));
    layer.token_experts.push_back(std::move(pa));
    return layer;
}

} // namespace moile
