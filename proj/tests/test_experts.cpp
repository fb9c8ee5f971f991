// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "moile/experts.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <cmath>

using namespace moile;

namespace {

MoileLayer small_layer(Rng& rng, int d = 16, int k = 16, int r = 4, int n1 = 3, int n2 = 2,
                       int top_k = 2, int d_embed = 4) {
    MoileLayer layer = make_moile_layer(d, k, r, n1, n2, top_k, d_embed, 0.2, 0.3, rng);
    layer.w0.value = random_normal(d, k, 0.5, rng);
    return layer;
}

// Straight-line re-evaluation of the layer equation with materialized
// per-expert weights.
Matrix dense_layer_oracle(const MoileLayer& layer, const Matrix& x, const Embedding& e,
                          bool use_task) {
    Matrix out = oracle::naive_matmul(layer.w0.value, x);
    const int n1 = static_cast<int>(layer.token_experts.size());
    for (int j = 0; j < x.cols; ++j) {
        std::vector<double> col(x.rows);
        for (int i = 0; i < x.rows; ++i) col[i] = x.at(i, j);
        TokenRoute route = route_tokens(layer.token_router.weight.value, col, layer.top_k);
        for (int i = 0; i < n1; ++i) {
            if (route.gates[i] == 0.0) continue;
            Matrix wi = merged_weight(layer.token_experts[i]);
            for (int rr = 0; rr < wi.rows; ++rr) {
                double s = 0.0;
                for (int cc = 0; cc < wi.cols; ++cc) s += wi.at(rr, cc) * x.at(cc, j);
                out.at(rr, j) += route.gates[i] * s;
            }
        }
    }
    if (use_task) {
        TaskRoute tr = route_task(layer.task_router.weight.value, e);
        Matrix wh = merged_weight(layer.task_experts[tr.index]);
        Matrix contrib = oracle::naive_matmul(wh, x);
        for (int rr = 0; rr < out.rows; ++rr)
            for (int j = 0; j < out.cols; ++j) out.at(rr, j) += tr.gate * contrib.at(rr, j);
    }
    return out;
}

} // namespace

TEST_CASE("expert_forward zero adapter and rank-1 selector") {
    ExpertAdapter zero;
    zero.b = Matrix(8, 2);
    zero.a = Matrix(2, 8);
    Matrix x(8, 3);
    x.at(0, 0) = 1.0;
    x.at(3, 1) = 2.0;
    CHECK(frob_norm(expert_forward(zero, x)) == 0.0);

    // rank-1 selector: B = e1, A = e1^T picks x's first coordinate into row 0
    ExpertAdapter sel;
    sel.b = Matrix(8, 1);
    sel.b.at(0, 0) = 1.0;
    sel.a = Matrix(1, 8);
    sel.a.at(0, 0) = 1.0;
    Matrix y = expert_forward(sel, x);
    CHECK(y.at(0, 0) == 1.0);
    CHECK(frob_norm(y) == 1.0);
}

TEST_CASE("expert_forward equals the materialized product") {
    Rng rng(1);
    ExpertAdapter ad;
    ad.b = random_normal(12, 3, 1.0, rng);
    ad.a = random_normal(3, 10, 1.0, rng);
    Matrix x = random_normal(10, 5, 1.0, rng);
    Matrix got = expert_forward(ad, x);
    Matrix want = oracle::naive_matmul(oracle::naive_matmul(ad.b, ad.a), x);
    CHECK(max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("expert_forward rejects mismatched input") {
    ExpertAdapter ad;
    ad.b = Matrix(8, 2);
    ad.a = Matrix(2, 8);
    CHECK_THROWS_AS(expert_forward(ad, Matrix(7, 1)), ContractViolation);
}

TEST_CASE("route_tokens select-all and tie-breaking") {
    // N1=2, K=2: both selected, gates are the full softmax
    Matrix w(2, 2, {1, 0, 0, 1});
    TokenRoute r = route_tokens(w, {0.3, -0.2}, 2);
    CHECK(r.selected == std::vector<int>{0, 1});
    auto probs = softmax({0.3, -0.2});
    CHECK(r.gates[0] == doctest::Approx(probs[0]));
    CHECK(r.gates[1] == doctest::Approx(probs[1]));

    // logits (10,0,0,0,0,0), K=2: expert 0 plus the lowest-index of the tie
    Matrix w6(6, 1, {10, 0, 0, 0, 0, 0});
    TokenRoute r6 = route_tokens(w6, {1.0}, 2);
    CHECK(r6.selected == std::vector<int>{0, 1});
    CHECK(r6.gates[2] == 0.0);
}

TEST_CASE("route_tokens matches a full-sort oracle") {
    Rng rng(2);
    Matrix w = random_normal(6, 8, 1.0, rng);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> x(8);
        for (double& v : x) v = rng.normal();
        TokenRoute r = route_tokens(w, x, 2);
        // oracle: full sort of the softmax probabilities
        std::vector<double> logits(6, 0.0);
        for (int i = 0; i < 6; ++i)
            for (int j = 0; j < 8; ++j) logits[i] += w.at(i, j) * x[j];
        auto probs = softmax(logits);
        std::vector<int> order{0, 1, 2, 3, 4, 5};
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs[a] > probs[b]; });
        std::vector<int> want{order[0], order[1]};
        std::sort(want.begin(), want.end());
        CHECK(r.selected == want);
        int nonzero = 0;
        for (double g : r.gates) nonzero += g != 0.0;
        CHECK(nonzero == 2);
    }
}

TEST_CASE("route_tokens rejects K larger than the expert count") {
    Matrix w(3, 4);
    CHECK_THROWS_AS(route_tokens(w, {0, 0, 0, 0}, 4), ContractViolation);
}

TEST_CASE("token selection is invariant under a constant logit shift") {
    Rng rng(3);
    Matrix w = random_normal(5, 6, 1.0, rng);
    Matrix w_shift = w;
    // adding a constant row to the weight shifts all logits equally only if
    // the input is fixed; probe directly on logits via a bias-like column
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> x(6);
        for (double& v : x) v = rng.normal();
        TokenRoute a = route_tokens(w, x, 2);
        // same logits plus constant: scale-invariant selection
        std::vector<double> logits(5, 0.0);
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 6; ++j) logits[i] += w.at(i, j) * x[j];
        std::vector<double> shifted = logits;
        for (double& v : shifted) v += 3.7;
        auto pa = softmax(logits);
        auto pb = softmax(shifted);
        std::vector<int> oa{0, 1, 2, 3, 4}, ob{0, 1, 2, 3, 4};
        std::stable_sort(oa.begin(), oa.end(), [&](int l, int r) { return pa[l] > pa[r]; });
        std::stable_sort(ob.begin(), ob.end(), [&](int l, int r) { return pb[l] > pb[r]; });
        CHECK(std::vector<int>(oa.begin(), oa.begin() + 2) == std::vector<int>(ob.begin(), ob.begin() + 2));
        (void)a;
        (void)w_shift;
    }
}

TEST_CASE("route_task single expert and direct softmax evaluation") {
    Matrix w1(1, 3);
    TaskRoute r1 = route_task(w1, {1.0, 2.0, 3.0});
    CHECK(r1.index == 0);
    CHECK(r1.gate == doctest::Approx(1.0));

    // logits (5, -5): index 0, gate ~ 0.99995
    Matrix w2(2, 1, {5.0, -5.0});
    TaskRoute r2 = route_task(w2, {1.0});
    CHECK(r2.index == 0);
    CHECK(r2.gate == doctest::Approx(1.0 / (1.0 + std::exp(-10.0))).epsilon(1e-10));

    // identical embedding across a batch selects identically
    Rng rng(4);
    Matrix w3 = random_normal(4, 5, 1.0, rng);
    Embedding e{0.1, -0.2, 0.3, 0.4, -0.5};
    TaskRoute first = route_task(w3, e);
    for (int i = 0; i < 10; ++i) {
        TaskRoute again = route_task(w3, e);
        CHECK(again.index == first.index);
        CHECK(again.gate == first.gate);
    }
}

TEST_CASE("layer_forward with zero adapters is the base projection") {
    Rng rng(5);
    MoileLayer layer = small_layer(rng);
    for (PartitionedAdapter& pa : layer.token_experts) {
        pa.b_res.value = Matrix(pa.b_res.value.rows, pa.b_res.value.cols);
    }
    for (PartitionedAdapter& pa : layer.task_experts) {
        pa.b_res.value = Matrix(pa.b_res.value.rows, pa.b_res.value.cols);
    }
    Matrix x = random_normal(16, 4, 1.0, rng);
    Embedding e(4, 0.3);
    StepContext ctx;
    auto out = layer_forward(ctx, layer, ctx.tape.constant(x), e, {});
    CHECK(max_abs_diff(ctx.tape.value(out), matmul(layer.w0.value, x)) < 1e-12);
}

TEST_CASE("degenerate single-expert routing applies gate 1") {
    Rng rng(6);
    MoileLayer layer = make_moile_layer(16, 16, 4, 1, 1, 1, 4, 0.2, 0.3, rng);
    layer.w0.value = random_normal(16, 16, 0.5, rng);
    Matrix x = random_normal(16, 3, 1.0, rng);
    Embedding e(4, 0.1);
    StepContext ctx;
    LayerTrace trace;
    auto out = layer_forward(ctx, layer, ctx.tape.constant(x), e, {}, &trace);
    Matrix w_tok = merged_weight(layer.token_experts[0]);
    Matrix w_task = merged_weight(layer.task_experts[0]);
    Matrix want = add(matmul(layer.w0.value, x), add(matmul(w_tok, x), matmul(w_task, x)));
    CHECK(max_abs_diff(ctx.tape.value(out), want) < 1e-12);
    CHECK(trace.task_gate == doctest::Approx(1.0));
}

TEST_CASE("layer_forward matches the dense oracle") {
    Rng rng(7);
    MoileLayer layer = small_layer(rng);
    Matrix x = random_normal(16, 5, 1.0, rng);
    Embedding e{0.5, -0.4, 0.2, 0.9};
    StepContext ctx;
    auto out = layer_forward(ctx, layer, ctx.tape.constant(x), e, {});
    Matrix want = dense_layer_oracle(layer, x, e, true);
    CHECK(max_abs_diff(ctx.tape.value(out), want) < 1e-10);

    // without the task branch
    StepContext ctx2;
    LayerForwardOpts opts;
    opts.use_task_branch = false;
    auto out2 = layer_forward(ctx2, layer, ctx2.tape.constant(x), e, opts);
    Matrix want2 = dense_layer_oracle(layer, x, e, false);
    CHECK(max_abs_diff(ctx2.tape.value(out2), want2) < 1e-10);
}

TEST_CASE("exactly K token gates and one task gate per position") {
    Rng rng(8);
    MoileLayer layer = small_layer(rng, 16, 16, 4, 6, 2, 2, 4);
    Matrix x = random_normal(16, 7, 1.0, rng);
    Embedding e{0.1, 0.2, 0.3, 0.4};
    StepContext ctx;
    LayerTrace trace;
    layer_forward(ctx, layer, ctx.tape.constant(x), e, {}, &trace);
    CHECK(trace.positions == 7);
    CHECK(trace.token_expert.size() == 7 * 2);
    for (double g : trace.token_gate) CHECK(g > 0.0);
    CHECK(trace.task_branch_used);
    CHECK(trace.task_gate > 0.0);
}

TEST_CASE("layer gradients pass finite differences for every trainable parameter") {
    Rng rng(9);
    MoileLayer layer = small_layer(rng, 12, 12, 3, 3, 2, 2, 4);
    Matrix x = random_normal(12, 4, 0.8, rng);
    Matrix target = random_normal(12, 4, 1.0, rng);
    Embedding e{0.6, -0.3, 0.8, 0.2};

    auto loss_value = [&](MoileLayer& l) {
        StepContext c;
        auto out = layer_forward(c, l, c.tape.constant(x), e, {});
        auto diff = c.tape.sub(out, c.tape.constant(target));
        return c.tape.value(c.tape.frob_sq(diff)).at(0, 0);
    };

    StepContext ctx;
    auto out = layer_forward(ctx, layer, ctx.tape.constant(x), e, {});
    auto loss = ctx.tape.frob_sq(ctx.tape.sub(out, ctx.tape.constant(target)));
    ctx.tape.backward(loss);

    int params_checked = 0;
    for (auto& [param, id] : ctx.params()) {
        Matrix g = ctx.tape.grad(id);
        // probe two entries per parameter
        Rng probe_rng(1000 + params_checked);
        for (int probe = 0; probe < 2; ++probe) {
            const int i = probe_rng.uniform_int(param->value.rows);
            const int j = probe_rng.uniform_int(param->value.cols);
            const double saved = param->value.at(i, j);
            const double h = 1e-5;
            param->value.at(i, j) = saved + h;
            const double up = loss_value(layer);
            param->value.at(i, j) = saved - h;
            const double dn = loss_value(layer);
            param->value.at(i, j) = saved;
            const double fd = (up - dn) / (2 * h);
            const double denom = std::max({1.0, std::abs(fd), std::abs(g.at(i, j))});
            CHECK(std::abs(g.at(i, j) - fd) / denom < 1e-4);
        }
        ++params_checked;
    }
    // routers plus residual factors of every expert that fired
    CHECK(params_checked >= 4);
}

TEST_CASE("w0 never receives gradients through the layer") {
    Rng rng(10);
    MoileLayer layer = small_layer(rng);
    Matrix x = random_normal(16, 3, 1.0, rng);
    Embedding e(4, 0.2);
    StepContext ctx;
    auto w0_leaf = ctx.frozen_leaf(layer.w0.value);
    auto out = layer_forward(ctx, layer, ctx.tape.constant(x), e, {});
    auto loss = ctx.tape.frob_sq(out);
    ctx.tape.backward(loss);
    CHECK(frob_norm(ctx.tape.grad(w0_leaf)) == 0.0);
    CHECK(!ctx.tape.needs_grad(w0_leaf));
}

TEST_CASE("single shared adapter mode bypasses routing") {
    Rng rng(11);
    MoileLayer layer = make_single_adapter_layer(16, 16, 4, 0.2, rng);
    layer.w0.value = random_normal(16, 16, 0.5, rng);
    Matrix x = random_normal(16, 3, 1.0, rng);
    StepContext ctx;
    auto out = layer_forward(ctx, layer, ctx.tape.constant(x), {}, {});
    Matrix w_ad = merged_weight(layer.token_experts[0]);
    Matrix want = add(matmul(layer.w0.value, x), matmul(w_ad, x));
    CHECK(max_abs_diff(ctx.tape.value(out), want) < 1e-12);
    CHECK(ctx.params().size() == 2); // just the adapter factors
}
