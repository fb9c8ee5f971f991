// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "moile/bench.hpp"
#include "moile/metrics.hpp"

namespace moile {

enum class BaselineMode { full, seq_lora, moe_lora_plain };

struct TrainConfig {
    double lambda1 = 1.0;
    double lambda2 = 0.5;
    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int steps_per_task = 600;
    int batch_size = 16;
    int cluster_count = 4; // M
    double cluster_alpha = 0.1;
    PPolicy p_policy;
    // ablation switches, valid only in full mode
    bool disable_incremental = false; // skip all partitioning
    bool disable_task_router = false; // drop the task-expert summand
    bool disable_ls = false;          // zero the lambda1 term
    bool disable_lo = false;          // zero the lambda2 term
    BaselineMode baseline = BaselineMode::full;
    uint64_t seed = 0;

    void validate() const;
    bool incremental_enabled() const;
    bool task_branch_enabled() const;
};

// Canonical variant tag: full, wo_il, wo_tr, wo_ls, wo_lo, seq_lora,
// moe_lora_plain.
std::string variant_name(const TrainConfig& cfg);
void apply_variant(TrainConfig& cfg, const std::string& variant);
AdapterArrangement arrangement_for(const TrainConfig& cfg);

struct StepLoss {
    int task = 0;
    int step = 0;
    double task_loss = 0.0;
    double ls = 0.0;
    double lo = 0.0;
    double total = 0.0;
};

struct RouterAudit {
    long long positions = 0;
    long long positions_exact_k = 0;
    long long samples = 0;
    long long samples_exact_one_task_gate = 0;
};

struct RunRecord {
    std::string setup;
    int order = 1;
    uint64_t seed = 0;
    std::string variant;
    AccuracyMatrix acc;
    std::vector<StepLoss> losses;
    RouterAudit audit;
    std::vector<std::vector<double>> token_gate_mass; // [task][token expert]
    std::vector<std::vector<double>> task_gate_mass;  // [task][task expert]
    uint64_t stream_hash = 0;
    bool aborted = false;
    std::string abort_reason;
    double wall_seconds = 0.0; // reported separately, never serialized
};

uint64_t stream_fingerprint(const TaskStream& stream);

// Optional CSV sink for per-token routing decisions.
struct TraceWriter {
    std::ostream* out = nullptr;
    void header();
    void row(int step, int task, int sample, int block, int pos, const char* level, int expert,
             double gate);
};

// Sequential continual training over the stream: partition adapters at task
// boundaries (when enabled), run clustering + routed forward + the combined
// loss per batch, then evaluate on every task seen so far.
RunRecord train_continual(Model& model, ClusterState& ctc, const TaskStream& stream,
                          const TrainConfig& cfg, const BenchConfig& bcfg,
                          TraceWriter* trace = nullptr);

// Repartitions every expert at the boundary into task t (1-based, t >= 2).
void task_boundary(Model& model, int task_1based, const TrainConfig& cfg);

// Accuracy of the model on episodes under a frozen clustering snapshot.
double eval_task_accuracy(Model& model, const ClusterState& ctc, const std::vector<Episode>& episodes,
                          const TrainConfig& cfg, const BenchConfig& bcfg);

} // namespace moile
