// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "moile/experts.hpp"

namespace moile {

struct ModelConfig {
    int vocab = 32;
    int d_model = 64;
    int d_ff = 128;
    int n_blocks = 2;
    int n_heads = 2;
    int max_seq = 24;
    int feat_dim = 8;
    int lora_rank = 8;
    int n_token_experts = 6; // N1
    int n_task_experts = 2;  // N2
    int top_k = 2;           // K
    int d_embed = 32;        // fused embedding dim fed to the task router
    double backbone_init = 0.08;
    double adapter_init = 0.05;
    double router_init = 0.1;

    void validate() const;
};

// One training example: context tokens (goal, and the instruction for
// low-level tasks), a scene feature vector, and the target token sequence.
struct Episode {
    std::vector<int> context;
    std::vector<double> features;
    std::vector<int> target;
};

struct Block {
    Param wq, wk, wv, wo; // d_model x d_model
    MoileLayer ff_up;     // d_ff x d_model, the adapted projection
    Param ff_down;        // d_model x d_ff
};

enum class AdapterArrangement { moile, single_shared };

// Small sequence model with a frozen backbone after warm-up; only routers
// and adapter factors train during continual learning.
struct Model {
    ModelConfig cfg;
    AdapterArrangement arrangement = AdapterArrangement::moile;
    Param tok_emb;   // d_model x vocab
    Param pos_emb;   // d_model x max_seq
    Param feat_proj; // d_model x feat_dim
    Param head;      // vocab x d_model
    std::vector<Block> blocks;

    // all backbone parameters, for warm-up and freeze audits
    std::vector<Param*> backbone_params();
    // adapter and router parameters that may train during continual learning
    std::vector<Param*> adapter_params(bool include_task_branch = true);
};

Model make_model(const ModelConfig& cfg, AdapterArrangement arrangement, uint64_t seed);

struct ModelForwardOpts {
    bool use_task_branch = true;
    bool adapters_active = true;
    bool train_backbone = false;                // warm-up only
    std::vector<LayerTrace>* traces = nullptr;  // one entry per block when set
};

// Teacher-forced next-token logits for the target positions, vocab x
// target_len, on the step's tape.
Tape::NodeId model_forward(StepContext& ctx, Model& m, const Episode& ep, const Embedding& task_emb,
                           const ModelForwardOpts& opts);

// Convenience value-level forward: target_len x vocab logits.
Matrix forward(Model& m, const Episode& ep, const Embedding& task_emb, bool use_task_branch = true);

// Mean cross-entropy of target_len x vocab logits against the targets.
double prediction_loss(const Matrix& logits, const std::vector<int>& targets);

// Greedy decode of target.size() tokens given the episode's context.
std::vector<int> greedy_decode(Model& m, const Episode& ep, const Embedding& task_emb,
                               bool use_task_branch = true);

// Exact-match rate under greedy decoding. Task embeddings are precomputed by
// the caller from a frozen cluster-state snapshot.
double accuracy(Model& m, const std::vector<Episode>& episodes,
                const std::vector<Embedding>& task_embs, bool use_task_branch = true);

struct WarmupConfig {
    int steps = 150;
    int batch = 8;
    double lr = 3e-3;
    uint64_t seed = 0;
};

// Short generic pre-training of the backbone (adapters inactive); the
// backbone is frozen afterwards.
void warmup_backbone(Model& m, const std::vector<Episode>& mix, const WarmupConfig& cfg);

} // namespace moile
