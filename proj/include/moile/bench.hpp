// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moile/ctc.hpp"
#include "moile/model.hpp"

namespace moile {

enum class Setup { HB, HE, LB, LE, HH };
enum class Level { high, low };

std::string setup_name(Setup s);
Setup setup_from_name(const std::string& name);
Level setup_level(Setup s); // HH is mixed; defined per phase

// Seven behavior categories and four environment categories.
const std::vector<std::string>& behavior_categories();
const std::vector<std::string>& environment_categories();

// Appendix-style task orderings, 1-based order ids 1..3.
std::vector<std::string> category_order(Setup s, int order);
std::vector<Setup> hybrid_phase_order(int order);

struct TaskSpec {
    Setup setup = Setup::HB;     // for hybrid phases, the phase's base setup
    std::string category;        // one category, or "ALL" for a hybrid phase
    Level level = Level::high;
    uint64_t seed = 0;

    void validate() const;
};

struct Task {
    TaskSpec spec;
    std::vector<Episode> train;
    std::vector<Episode> eval;
};

struct TaskStream {
    Setup setup = Setup::HB;
    int order = 1;
    uint64_t seed = 0;
    std::vector<Task> tasks;
};

struct BenchConfig {
    int episodes_train = 512;
    int episodes_eval = 128;
    int goal_len = 4;
    int instr_len = 4;
    int target_len = 4;
    int feat_dim = 8;
    int d_embed = 32;            // frozen-encoder output = 2 halves of d_embed/2
    uint64_t encoder_seed = 2024;
    double delta_density = 0.35; // chance a category overrides a base-table entry
    double blob_noise = 0.25;
};

// Token layout inside the 32-token vocabulary.
constexpr int kGoalBase = 0;
constexpr int kInstrBase = 8;
constexpr int kActionBase = 16;
constexpr int kSymbolCount = 8;

// Human-readable token names; action tokens carry navigation-style names.
std::string token_name(int token);

// Deterministic task stream for (setup, order, seed). Task sequences follow
// the fixed orderings exactly; hybrid streams hold one phase per base setup.
TaskStream generate_stream(Setup setup, int order, uint64_t seed, const BenchConfig& cfg);

// Frozen feature encoder standing in for pretrained visual/text towers:
// a fixed random affine map plus tanh per modality, concatenated.
Embedding frozen_encode(const Episode& ep, uint64_t encoder_seed, const BenchConfig& cfg);

// Generic warm-up data: both levels, tables private to the warm-up seed.
std::vector<Episode> make_warmup_mix(const BenchConfig& cfg, uint64_t seed, int count);

struct LearnabilityBudget {
    int steps = 300;
    int batch = 8;
    double lr = 3e-3;
    double threshold = 0.9;
    uint64_t seed = 0;
};

struct LearnabilityReport {
    struct Row {
        std::string category;
        Level level = Level::high;
        double accuracy = 0.0;
        bool passed = false;
    };
    std::vector<Row> rows;
    bool all_passed = true;
};

// Trains a fresh plain model on each task in isolation and checks it clears
// the accuracy threshold on the held-out split. Guards benchmark quality.
LearnabilityReport learnability_check(const TaskStream& stream, const ModelConfig& mcfg,
                                      const LearnabilityBudget& budget);

} // namespace moile
