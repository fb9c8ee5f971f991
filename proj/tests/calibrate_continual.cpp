// SPDX-License-Identifier: Apache-2.0
// Scratch calibration for continual-learning dynamics (not in the suite).
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>

#include "moile/trainer.hpp"

using namespace moile;

int main(int argc, char** argv) {
    BenchConfig bcfg;
    bcfg.episodes_train = 160;
    bcfg.episodes_eval = 48;
    ModelConfig mcfg;
    TrainConfig base;
    base.steps_per_task = argc > 1 ? std::atoi(argv[1]) : 240;
    base.batch_size = argc > 2 ? std::atoi(argv[2]) : 8;
    base.lr = argc > 3 ? std::atof(argv[3]) : 1e-3;
    int warm_steps = argc > 4 ? std::atoi(argv[4]) : 220;
    uint64_t seed = argc > 5 ? std::strtoull(argv[5], nullptr, 10) : 0;
    const char* only = argc > 6 ? argv[6] : nullptr;
    Setup setup = argc > 7 ? setup_from_name(argv[7]) : Setup::HH;
    if (argc > 8) bcfg.episodes_train = std::atoi(argv[8]);
    if (argc > 9) bcfg.episodes_eval = std::atoi(argv[9]);
    if (argc > 10) mcfg.lora_rank = std::atoi(argv[10]);
    if (argc > 11) bcfg.delta_density = std::atof(argv[11]);

    for (const char* variant : {"full", "wo_il", "wo_tr", "wo_ls", "wo_lo", "seq_lora"}) {
        if (only && std::strcmp(only, variant) != 0) continue;
        TaskStream stream = generate_stream(setup, 1, seed, bcfg);
        TrainConfig cfg = base;
        apply_variant(cfg, variant);
        cfg.seed = seed;
        Model model = make_model(mcfg, arrangement_for(cfg), seed);
        WarmupConfig wcfg;
        wcfg.steps = warm_steps;
        wcfg.lr = 3e-3;
        wcfg.seed = seed;
        std::vector<Episode> mix = make_warmup_mix(bcfg, 7777, 256);
        warmup_backbone(model, mix, wcfg);
        {
            // report post-warm-up loss on the mix
            double total = 0.0;
            for (size_t i = 0; i < mix.size(); i += 8) {
                Matrix lg = forward(model, mix[i], Embedding(mcfg.d_embed, 0.0), false);
                total += prediction_loss(lg, mix[i].target);
            }
            std::printf("  warmup CE ~ %.3f over %zu probes\n", total / ((mix.size() + 7) / 8),
                        (mix.size() + 7) / 8);
        }
        ClusterState ctc;
        auto t0 = std::chrono::steady_clock::now();
        RunRecord rec = train_continual(model, ctc, stream, cfg, bcfg);
        auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%-14s AA=%.3f FM=%.3f  audit K: %lld/%lld task1: %lld/%lld  %.1fs%s\n",
                    variant, average_accuracy(rec.acc), forgetting_measure(rec.acc),
                    rec.audit.positions_exact_k, rec.audit.positions,
                    rec.audit.samples_exact_one_task_gate, rec.audit.samples, dt,
                    rec.aborted ? " ABORTED" : "");
        std::printf("   acc rows:");
        for (const auto& row : rec.acc.rows) {
            std::printf(" [");
            for (double a : row) std::printf(" %.2f", a);
            std::printf(" ]");
        }
        std::printf("\n   CE per task (first->last):");
        int t_prev = -1;
        double first_ce = 0.0, last_ce = 0.0;
        for (const StepLoss& sl : rec.losses) {
            if (sl.task != t_prev) {
                if (t_prev >= 0) std::printf(" t%d %.2f->%.2f", t_prev, first_ce, last_ce);
                t_prev = sl.task;
                first_ce = sl.task_loss;
            }
            last_ce = sl.task_loss;
        }
        if (t_prev >= 0) std::printf(" t%d %.2f->%.2f", t_prev, first_ce, last_ce);
        std::printf("\n");
        {
            // train-split accuracy on the last task, to separate fit from generalization
            const Task& last = stream.tasks.back();
            std::vector<Episode> head(last.train.begin(), last.train.begin() + 32);
            const double train_acc = eval_task_accuracy(model, ctc, head, cfg, bcfg);
            std::printf("   last-task train-split acc=%.2f\n", train_acc);
        }
    }
    return 0;
}
