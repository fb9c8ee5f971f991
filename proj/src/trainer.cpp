// SPDX-License-Identifier: Apache-2.0
#include "moile/trainer.hpp"

#include <chrono>
#include <cmath>
#include <ostream>

namespace moile {

void TrainConfig::validate() const {
    MOILE_REQUIRE(lambda1 >= 0.0 && lambda2 >= 0.0, "TrainConfig: negative loss weights");
    MOILE_REQUIRE(steps_per_task >= 0 && batch_size >= 1, "TrainConfig: bad step/batch sizes");
    MOILE_REQUIRE(cluster_count >= 1, "TrainConfig: need at least one cluster");
    MOILE_REQUIRE(cluster_alpha > 0.0 && cluster_alpha <= 1.0, "TrainConfig: alpha outside (0,1]");
    if (baseline != BaselineMode::full) {
        MOILE_REQUIRE(!disable_incremental && !disable_task_router && !disable_ls && !disable_lo,
                      "TrainConfig: ablation flags are only valid in full mode");
    }
}

bool TrainConfig::incremental_enabled() const {
    return baseline == BaselineMode::full && !disable_incremental;
}

bool TrainConfig::task_branch_enabled() const {
    if (baseline == BaselineMode::seq_lora) return false;
    return !disable_task_router;
}

std::string variant_name(const TrainConfig& cfg) {
    if (cfg.baseline == BaselineMode::seq_lora) return "seq_lora";
    if (cfg.baseline == BaselineMode::moe_lora_plain) return "moe_lora_plain";
    if (cfg.disable_incremental) return "wo_il";
    if (cfg.disable_task_router) return "wo_tr";
    if (cfg.disable_ls) return "wo_ls";
    if (cfg.disable_lo) return "wo_lo";
    return "full";
}

void apply_variant(TrainConfig& cfg, const std::string& variant) {
    cfg.baseline = BaselineMode::full;
    cfg.disable_incremental = cfg.disable_task_router = cfg.disable_ls = cfg.disable_lo = false;
    if (variant == "full") return;
    if (variant == "wo_il") { cfg.disable_incremental = true; return; }
    if (variant == "wo_tr") { cfg.disable_task_router = true; return; }
    if (variant == "wo_ls") { cfg.disable_ls = true; return; }
    if (variant == "wo_lo") { cfg.disable_lo = true; return; }
    if (variant == "seq_lora") { cfg.baseline = BaselineMode::seq_lora; return; }
    if (variant == "moe_lora_plain") { cfg.baseline = BaselineMode::moe_lora_plain; return; }
    MOILE_REQUIRE(false, "unknown variant: " + variant);
}

AdapterArrangement arrangement_for(const TrainConfig& cfg) {
    return cfg.baseline == BaselineMode::seq_lora ? AdapterArrangement::single_shared
                                                  : AdapterArrangement::moile;
}

uint64_t stream_fingerprint(const TaskStream& stream) {
    uint64_t h = 1469598103934665603ull; // FNV offset basis
    auto feed = [&](uint64_t v) {
        h ^= v;
        h *= 1099511628211ull;
    };
    feed(static_cast<uint64_t>(stream.setup));
    feed(static_cast<uint64_t>(stream.order));
    feed(stream.seed);
    for (const Task& task : stream.tasks) {
        for (const std::vector<Episode>* split : {&task.train, &task.eval}) {
            for (const Episode& ep : *split) {
                for (int tok : ep.context) feed(static_cast<uint64_t>(tok) + 0x100);
                for (int tok : ep.target) feed(static_cast<uint64_t>(tok) + 0x10000);
                for (double f : ep.features) {
                    uint64_t bits;
                    static_assert(sizeof(bits) == sizeof(f));
                    __builtin_memcpy(&bits, &f, sizeof(bits));
                    feed(bits);
                }
            }
        }
    }
    return h;
}

void TraceWriter::header() {
    if (out) *out << "step,task,sample,block,pos,level,expert,gate\n";
}

void TraceWriter::row(int step, int task, int sample, int block, int pos, const char* level,
                      int expert, double gate) {
    if (out)
        *out << step << ',' << task << ',' << sample << ',' << block << ',' << pos << ',' << level
             << ',' << expert << ',' << gate << '\n';
}

void task_boundary(Model& model, int task_1based, const TrainConfig& cfg) {
    if (task_1based < 2 || !cfg.incremental_enabled()) return;
    for (Block& b : model.blocks) {
        for (auto* experts : {&b.ff_up.token_experts, &b.ff_up.task_experts}) {
            for (PartitionedAdapter& pa : *experts) {
                SvdResult fac = svd_of_product(stacked_b(pa), stacked_a(pa));
                const int p = choose_retained_rank(fac.s, pa.rank, cfg.p_policy);
                repartition(pa, p);
            }
        }
    }
}

double eval_task_accuracy(Model& model, const ClusterState& ctc, const std::vector<Episode>& episodes,
                          const TrainConfig& cfg, const BenchConfig& bcfg) {
    std::vector<Embedding> embs;
    embs.reserve(episodes.size());
    for (const Episode& ep : episodes) {
        if (ctc.initialized) {
            embs.push_back(task_embedding(ctc, frozen_encode(ep, bcfg.encoder_seed, bcfg)));
        } else {
            embs.push_back(Embedding(model.cfg.d_embed, 0.0));
        }
    }
    return accuracy(model, episodes, embs, cfg.task_branch_enabled());
}

namespace {

struct LossTerms {
    Tape::NodeId ls = -1;
    Tape::NodeId lo = -1;
};

// lambda-weighted spectral losses summed over every partitioned adapter.
LossTerms spectral_losses(StepContext& ctx, Model& model, const TrainConfig& cfg) {
    LossTerms terms;
    Tape& t = ctx.tape;
    for (Block& b : model.blocks) {
        for (auto* experts : {&b.ff_up.token_experts, &b.ff_up.task_experts}) {
            for (PartitionedAdapter& pa : *experts) {
                if (pa.retained == 0) continue;
                if (!cfg.disable_ls) {
                    Tape::NodeId ls = singular_value_loss_node(ctx, pa);
                    terms.ls = terms.ls < 0 ? ls : t.add(terms.ls, ls);
                }
                if (!cfg.disable_lo) {
                    Tape::NodeId lo = orthogonal_loss_node(ctx, pa);
                    terms.lo = terms.lo < 0 ? lo : t.add(terms.lo, lo);
                }
            }
        }
    }
    return terms;
}

} // namespace

RunRecord train_continual(Model& model, ClusterState& ctc, const TaskStream& stream,
                          const TrainConfig& cfg, const BenchConfig& bcfg, TraceWriter* trace) {
    cfg.validate();
    MOILE_REQUIRE(!stream.tasks.empty(), "train_continual: empty stream");
    MOILE_REQUIRE((model.arrangement == AdapterArrangement::single_shared) ==
                      (cfg.baseline == BaselineMode::seq_lora),
                  "train_continual: model arrangement does not match the baseline mode");

    const auto t_start = std::chrono::steady_clock::now();
    RunRecord rec;
    rec.setup = setup_name(stream.setup);
    rec.order = stream.order;
    rec.seed = cfg.seed;
    rec.variant = variant_name(cfg);
    rec.stream_hash = stream_fingerprint(stream);
    if (trace) trace->header();

    const int n_token = static_cast<int>(model.blocks[0].ff_up.token_experts.size());
    const int n_task = static_cast<int>(model.blocks[0].ff_up.task_experts.size());

    // fused embeddings are a fixed function of the episode; cache them
    std::vector<std::vector<Embedding>> train_embs(stream.tasks.size());
    for (size_t ti = 0; ti < stream.tasks.size(); ++ti) {
        train_embs[ti].reserve(stream.tasks[ti].train.size());
        for (const Episode& ep : stream.tasks[ti].train)
            train_embs[ti].push_back(frozen_encode(ep, bcfg.encoder_seed, bcfg));
    }

    Rng batch_rng(cfg.seed * 0x9E3779B97F4A7C15ull + 0xBA7C4);
    const bool use_task_branch = cfg.task_branch_enabled();
    const bool run_ctc = cfg.baseline != BaselineMode::seq_lora;
    if (model.arrangement == AdapterArrangement::moile) {
        rec.token_gate_mass.assign(stream.tasks.size(), std::vector<double>(n_token, 0.0));
        rec.task_gate_mass.assign(stream.tasks.size(), std::vector<double>(n_task, 0.0));
    }

    for (size_t ti = 0; ti < stream.tasks.size(); ++ti) {
        const Task& task = stream.tasks[ti];
        task_boundary(model, static_cast<int>(ti) + 1, cfg);

        for (int step = 0; step < cfg.steps_per_task; ++step) {
            std::vector<int> batch(cfg.batch_size);
            for (int& idx : batch) idx = batch_rng.uniform_int(static_cast<int>(task.train.size()));

            // cluster maintenance: assign with the current centers, update,
            // then read the task embedding from the updated centers
            std::vector<Embedding> sample_emb(cfg.batch_size, Embedding(model.cfg.d_embed, 0.0));
            if (run_ctc) {
                if (!ctc.initialized) {
                    std::vector<Embedding> first;
                    for (int idx : batch) first.push_back(train_embs[ti][idx]);
                    while (static_cast<int>(first.size()) < cfg.cluster_count)
                        first.push_back(train_embs[ti][batch_rng.uniform_int(
                            static_cast<int>(task.train.size()))]);
                    ctc = init_centers(first, cfg.cluster_count, cfg.seed, cfg.cluster_alpha);
                }
                std::vector<std::pair<const Embedding*, int>> assigned;
                for (int idx : batch) {
                    const Embedding* x = &train_embs[ti][idx];
                    assigned.push_back({x, assign(ctc, *x)});
                }
                update_centers(ctc, assigned);
                for (int bi = 0; bi < cfg.batch_size; ++bi)
                    sample_emb[bi] = task_embedding(ctc, train_embs[ti][batch[bi]]);
            }

            StepContext ctx;
            Tape& t = ctx.tape;
            Tape::NodeId ce_sum = -1;
            for (int bi = 0; bi < cfg.batch_size; ++bi) {
                const Episode& ep = task.train[batch[bi]];
                std::vector<LayerTrace> traces;
                ModelForwardOpts opts;
                opts.use_task_branch = use_task_branch;
                opts.traces = &traces;
                Tape::NodeId logits = model_forward(ctx, model, ep, sample_emb[bi], opts);
                Tape::NodeId ce = t.cross_entropy_cols(logits, ep.target);
                ce_sum = ce_sum < 0 ? ce : t.add(ce_sum, ce);

                if (model.arrangement == AdapterArrangement::moile) {
                    for (size_t blk = 0; blk < traces.size(); ++blk) {
                        const LayerTrace& tr = traces[blk];
                        const int k = model.blocks[blk].ff_up.top_k;
                        for (int pos = 0; pos < tr.positions; ++pos) {
                            ++rec.audit.positions;
                            int live = 0;
                            for (int slot = 0; slot < k; ++slot) {
                                const int e = tr.token_expert[pos * k + slot];
                                const double g = tr.token_gate[pos * k + slot];
                                if (g > 0.0) ++live;
                                rec.token_gate_mass[ti][e] += g;
                                if (trace)
                                    trace->row(step, static_cast<int>(ti), bi,
                                               static_cast<int>(blk), pos, "token", e, g);
                            }
                            if (live == k) ++rec.audit.positions_exact_k;
                        }
                        if (tr.task_branch_used) {
                            ++rec.audit.samples;
                            if (tr.task_gate > 0.0) ++rec.audit.samples_exact_one_task_gate;
                            rec.task_gate_mass[ti][tr.task_expert] += tr.task_gate;
                            if (trace)
                                trace->row(step, static_cast<int>(ti), bi, static_cast<int>(blk),
                                           -1, "task", tr.task_expert, tr.task_gate);
                        }
                    }
                }
            }
            Tape::NodeId ce_mean = t.scale(ce_sum, 1.0 / cfg.batch_size);
            LossTerms spectral = spectral_losses(ctx, model, cfg);
            Tape::NodeId total = ce_mean;
            if (spectral.ls >= 0) total = t.add(total, t.scale(spectral.ls, cfg.lambda1));
            if (spectral.lo >= 0) total = t.add(total, t.scale(spectral.lo, cfg.lambda2));

            StepLoss sl;
            sl.task = static_cast<int>(ti);
            sl.step = step;
            sl.task_loss = t.value(ce_mean).at(0, 0);
            sl.ls = spectral.ls >= 0 ? t.value(spectral.ls).at(0, 0) : 0.0;
            sl.lo = spectral.lo >= 0 ? t.value(spectral.lo).at(0, 0) : 0.0;
            sl.total = t.value(total).at(0, 0);
            rec.losses.push_back(sl);

            if (!std::isfinite(sl.total)) {
                rec.aborted = true;
                rec.abort_reason = "non-finite loss at task " + std::to_string(ti) + " step " +
                                   std::to_string(step);
                rec.wall_seconds =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
                return rec;
            }

            t.backward(total);
            AdamConfig adam{cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
            for (auto& [param, id] : ctx.params()) adam_step(*param, t.grad(id), adam);
        }

        // evaluate on all tasks seen so far with the clustering state frozen
        std::vector<double> row;
        for (size_t u = 0; u <= ti; ++u)
            row.push_back(eval_task_accuracy(model, ctc, stream.tasks[u].eval, cfg, bcfg));
        rec.acc.append_row(std::move(row));
    }
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return rec;
}

} // namespace moile
