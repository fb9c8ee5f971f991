// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "moile/ctc.hpp"
#include "moile/incremental.hpp"
#include "moile/params.hpp"

namespace moile {

struct Router {
    Param weight; // num_experts x input_dim
    ExpertLevel level = ExpertLevel::token;
};

// Top-K selection over softmax probabilities. Gates hold the raw selected
// probabilities (no renormalization); unselected entries are zero. Ties pick
// the lower expert index.
struct TokenRoute {
    std::vector<int> selected;  // ascending, size K
    std::vector<double> gates;  // size num_experts
};
TokenRoute route_tokens(const Matrix& router_weight, const std::vector<double>& x, int k);

struct TaskRoute {
    int index = 0;
    double gate = 0.0;
};
TaskRoute route_task(const Matrix& router_weight, const Embedding& e);

// B * (A * x), low-rank first; never materializes B*A.
Matrix expert_forward(const ExpertAdapter& adapter, const Matrix& x);

// One adapted projection: f(x) = W0 x + sum_i G1(x)_i E_i(x) + sum_i G2(e)_i E_i^h(x).
// In single_shared mode there are no routers and the one adapter applies with
// gate 1 (the sequential-LoRA baseline).
struct MoileLayer {
    Param w0; // d x k; trains only during backbone warm-up
    std::vector<PartitionedAdapter> token_experts;
    std::vector<PartitionedAdapter> task_experts;
    Router token_router; // N1 x k
    Router task_router;  // N2 x d_e
    int top_k = 2;
    bool single_shared = false;

    int input_dim() const { return w0.value.cols; }
    int output_dim() const { return w0.value.rows; }
    void validate() const;
};

// Per-episode routing decisions for audits and the routing-preference CSV.
struct LayerTrace {
    int positions = 0;
    std::vector<int> token_expert;   // K entries per position
    std::vector<double> token_gate;  // parallel to token_expert
    int task_expert = -1;
    double task_gate = 0.0;
    bool task_branch_used = false;
};

struct LayerForwardOpts {
    bool use_task_branch = true;
    bool adapters_active = true; // false during backbone warm-up
    bool train_base = false;     // register w0 as a parameter (warm-up only)
};

Tape::NodeId layer_forward(StepContext& ctx, MoileLayer& layer, Tape::NodeId x,
                           const Embedding& task_emb, const LayerForwardOpts& opts,
                           LayerTrace* trace = nullptr);

MoileLayer make_moile_layer(int d, int k, int rank, int n_token, int n_task, int top_k, int d_embed,
                            double adapter_scale, double router_scale, Rng& rng);
MoileLayer make_single_adapter_layer(int d, int k, int rank, double adapter_scale, Rng& rng);

} // namespace moile
