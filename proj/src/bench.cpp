// SPDX-License-Identifier: Apache-2.0
#include "moile/bench.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace moile {

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

uint64_t mix(uint64_t a, uint64_t b) { return splitmix64(a ^ splitmix64(b)); }
uint64_t mix(uint64_t a, uint64_t b, uint64_t c) { return mix(mix(a, b), c); }
uint64_t mix(uint64_t a, uint64_t b, uint64_t c, uint64_t d) { return mix(mix(a, b, c), d); }

constexpr uint64_t kTagTables = 0x7AB1E5;
constexpr uint64_t kTagDelta = 0xDE17A;
constexpr uint64_t kTagTuples = 0x70913;
constexpr uint64_t kTagEpisode = 0xE9150;
constexpr uint64_t kTagBlob = 0xB10B;
constexpr uint64_t kTagShift = 0x5817F;

const std::vector<std::string> kBehaviors{"EXAMINE",      "PICK&PLACE", "HEAT",   "COOL",
                                          "CLEAN",        "PICK2&PLACE", "MOVABLE"};
const std::vector<std::string> kEnvironments{"KITCHENS", "LIVINGROOMS", "BEDROOMS", "BATHROOMS"};

const std::array<std::array<const char*, 7>, 3> kBehaviorOrders{{
    {"EXAMINE", "HEAT", "PICK2&PLACE", "COOL", "PICK&PLACE", "CLEAN", "MOVABLE"},
    {"PICK2&PLACE", "CLEAN", "MOVABLE", "PICK&PLACE", "HEAT", "EXAMINE", "COOL"},
    {"MOVABLE", "COOL", "PICK&PLACE", "HEAT", "CLEAN", "EXAMINE", "PICK2&PLACE"},
}};

const std::array<std::array<const char*, 4>, 3> kEnvironmentOrders{{
    {"BEDROOMS", "BATHROOMS", "LIVINGROOMS", "KITCHENS"},
    {"KITCHENS", "BEDROOMS", "LIVINGROOMS", "BATHROOMS"},
    {"BATHROOMS", "LIVINGROOMS", "KITCHENS", "BEDROOMS"},
}};

const std::array<std::array<Setup, 4>, 3> kHybridOrders{{
    {Setup::LB, Setup::HB, Setup::LE, Setup::HE},
    {Setup::HB, Setup::LB, Setup::HE, Setup::LE},
    {Setup::LB, Setup::LE, Setup::HB, Setup::HE},
}};

int category_id(const std::string& category) {
    for (size_t i = 0; i < kBehaviors.size(); ++i)
        if (kBehaviors[i] == category) return static_cast<int>(i);
    for (size_t i = 0; i < kEnvironments.size(); ++i)
        if (kEnvironments[i] == category) return 16 + static_cast<int>(i);
    MOILE_REQUIRE(false, "unknown category: " + category);
    return -1;
}

// Per-category symbol tables. target[j] reads one key symbol (the goal for
// high-level tasks, the instruction for low-level tasks) through a table
// shared across the stream's categories plus a sparse per-category override.
struct CategoryTables {
    // [position][symbol] -> symbol
    std::vector<std::array<int, kSymbolCount>> map;
};

CategoryTables build_tables(Level level, const std::string& category, uint64_t stream_seed,
                            const BenchConfig& cfg) {
    const int positions = cfg.target_len;
    Rng base_rng(mix(stream_seed, kTagTables, level == Level::high ? 1 : 2));
    Rng delta_rng(mix(stream_seed, kTagDelta, level == Level::high ? 1 : 2, category_id(category)));
    CategoryTables t;
    t.map.resize(positions);
    for (int pos = 0; pos < positions; ++pos)
        for (int s = 0; s < kSymbolCount; ++s) {
            int v = base_rng.uniform_int(kSymbolCount);
            if (delta_rng.uniform() < cfg.delta_density) v = delta_rng.uniform_int(kSymbolCount);
            t.map[pos][s] = v;
        }
    return t;
}

std::vector<double> blob_vector(const std::string& category, Level level, uint64_t tag, double scale,
                                int dim) {
    Rng rng(mix(category_id(category), level == Level::high ? 1 : 2, tag));
    std::vector<double> v(dim);
    for (double& x : v) x = scale * rng.normal();
    return v;
}

std::vector<int> decode_tuple(uint64_t code, int len) {
    std::vector<int> symbols(len);
    for (int i = 0; i < len; ++i) {
        symbols[i] = static_cast<int>(code % kSymbolCount);
        code /= kSymbolCount;
    }
    return symbols;
}

// Distinct key-tuple codes for a task: a seeded partial shuffle of the full
// enumeration keeps train and eval splits disjoint by construction.
std::vector<uint64_t> sample_tuple_codes(uint64_t seed, int len, int count) {
    uint64_t space = 1;
    for (int i = 0; i < len; ++i) space *= kSymbolCount;
    MOILE_REQUIRE(static_cast<uint64_t>(count) <= space, "task needs more key tuples than exist");
    std::vector<uint64_t> codes(space);
    std::iota(codes.begin(), codes.end(), 0);
    Rng rng(seed);
    for (int i = 0; i < count; ++i) {
        const int j = i + rng.uniform_int(static_cast<int>(space - i));
        std::swap(codes[i], codes[j]);
    }
    codes.resize(count);
    return codes;
}

Episode make_episode(const std::string& category, Level level, uint64_t key_code,
                     const CategoryTables& tables, uint64_t episode_seed, const BenchConfig& cfg) {
    Rng rng(episode_seed);
    Episode ep;

    std::vector<int> goal_syms, instr_syms;
    if (level == Level::high) {
        goal_syms = decode_tuple(key_code, cfg.goal_len);
    } else {
        instr_syms = decode_tuple(key_code, cfg.instr_len);
        goal_syms.resize(cfg.goal_len);
        for (int& s : goal_syms) s = rng.uniform_int(kSymbolCount);
    }
    if (level == Level::high) {
        // goal only
        for (int s : goal_syms) ep.context.push_back(kGoalBase + s);
    } else {
        for (int s : goal_syms) ep.context.push_back(kGoalBase + s);
        for (int s : instr_syms) ep.context.push_back(kInstrBase + s);
    }

    const int b = rng.uniform_int(2);
    const std::vector<double> mean = blob_vector(category, level, kTagBlob, 1.6, cfg.feat_dim);
    const std::vector<double> shift = blob_vector(category, level, kTagShift, 1.4, cfg.feat_dim);
    ep.features.resize(cfg.feat_dim);
    for (int i = 0; i < cfg.feat_dim; ++i)
        ep.features[i] = mean[i] + b * shift[i] + cfg.blob_noise * rng.normal();

    const int target_base = level == Level::high ? kInstrBase : kActionBase;
    const std::vector<int>& keys = level == Level::high ? goal_syms : instr_syms;
    const int key_len = static_cast<int>(keys.size());
    for (int pos = 0; pos < cfg.target_len; ++pos) {
        int idx = tables.map[pos][keys[pos % key_len]];
        if (pos == 0) idx = (idx + b) % kSymbolCount;
        ep.target.push_back(target_base + idx);
    }
    return ep;
}

Task make_category_task(Setup setup, const std::string& category, Level level, uint64_t stream_seed,
                        int n_train, int n_eval, const BenchConfig& cfg) {
    Task task;
    task.spec = TaskSpec{setup, category, level, mix(stream_seed, category_id(category))};
    const CategoryTables tables = build_tables(level, category, stream_seed, cfg);
    const int key_len = level == Level::high ? cfg.goal_len : cfg.instr_len;
    const std::vector<uint64_t> codes =
        sample_tuple_codes(mix(task.spec.seed, kTagTuples), key_len, n_train + n_eval);
    for (int i = 0; i < n_train; ++i)
        task.train.push_back(make_episode(category, level, codes[i], tables,
                                          mix(task.spec.seed, kTagEpisode, 0, i), cfg));
    for (int i = 0; i < n_eval; ++i)
        task.eval.push_back(make_episode(category, level, codes[n_train + i], tables,
                                         mix(task.spec.seed, kTagEpisode, 1, i), cfg));
    return task;
}

// One hybrid phase: a round-robin mixture over the base setup's categories.
Task make_phase_task(Setup phase_setup, uint64_t stream_seed, const BenchConfig& cfg) {
    const Level level = setup_level(phase_setup);
    const std::vector<std::string>& cats =
        (phase_setup == Setup::HB || phase_setup == Setup::LB) ? kBehaviors : kEnvironments;
    const int n_cat = static_cast<int>(cats.size());

    Task phase;
    phase.spec = TaskSpec{phase_setup, "ALL", level,
                          mix(stream_seed, 0x99, static_cast<uint64_t>(phase_setup))};

    std::vector<Task> parts;
    const int per_cat_train = (cfg.episodes_train + n_cat - 1) / n_cat;
    const int per_cat_eval = (cfg.episodes_eval + n_cat - 1) / n_cat;
    for (const std::string& cat : cats)
        parts.push_back(make_category_task(phase_setup, cat, level, mix(stream_seed, 0x42),
                                           per_cat_train, per_cat_eval, cfg));
    for (int i = 0; static_cast<int>(phase.train.size()) < cfg.episodes_train; ++i)
        phase.train.push_back(parts[i % n_cat].train[i / n_cat]);
    for (int i = 0; static_cast<int>(phase.eval.size()) < cfg.episodes_eval; ++i)
        phase.eval.push_back(parts[i % n_cat].eval[i / n_cat]);
    return phase;
}

} // namespace

std::string setup_name(Setup s) {
    switch (s) {
    case Setup::HB: return "HB";
    case Setup::HE: return "HE";
    case Setup::LB: return "LB";
    case Setup::LE: return "LE";
    case Setup::HH: return "HH";
    }
    return "?";
}

Setup setup_from_name(const std::string& name) {
    for (Setup s : {Setup::HB, Setup::HE, Setup::LB, Setup::LE, Setup::HH})
        if (setup_name(s) == name) return s;
    MOILE_REQUIRE(false, "unknown setup: " + name);
    return Setup::HB;
}

Level setup_level(Setup s) {
    MOILE_REQUIRE(s != Setup::HH, "setup_level: hybrid streams mix levels per phase");
    return (s == Setup::HB || s == Setup::HE) ? Level::high : Level::low;
}

const std::vector<std::string>& behavior_categories() { return kBehaviors; }
const std::vector<std::string>& environment_categories() { return kEnvironments; }

std::vector<std::string> category_order(Setup s, int order) {
    MOILE_REQUIRE(order >= 1 && order <= 3, "category_order: order must be 1..3");
    MOILE_REQUIRE(s != Setup::HH, "category_order: hybrid uses hybrid_phase_order");
    if (s == Setup::HB || s == Setup::LB) {
        const auto& row = kBehaviorOrders[order - 1];
        return std::vector<std::string>(row.begin(), row.end());
    }
    const auto& row = kEnvironmentOrders[order - 1];
    return std::vector<std::string>(row.begin(), row.end());
}

std::vector<Setup> hybrid_phase_order(int order) {
    MOILE_REQUIRE(order >= 1 && order <= 3, "hybrid_phase_order: order must be 1..3");
    const auto& row = kHybridOrders[order - 1];
    return std::vector<Setup>(row.begin(), row.end());
}

void TaskSpec::validate() const {
    if (category == "ALL") return; // hybrid phase
    const std::vector<std::string>& expect =
        (setup == Setup::HB || setup == Setup::LB) ? kBehaviors : kEnvironments;
    MOILE_REQUIRE(std::find(expect.begin(), expect.end(), category) != expect.end(),
                  "TaskSpec: category does not belong to the setup's task set");
}

std::string token_name(int token) {
    static const std::array<const char*, 8> kActions{"MoveAhead",    "TurnLeft",  "TurnRight",
                                                     "LookUp",       "LookDown",  "PickupObject",
                                                     "PutObject",    "ToggleObject"};
    MOILE_REQUIRE(token >= 0 && token < 32, "token_name: token out of vocabulary");
    if (token < kInstrBase) return "goal" + std::to_string(token);
    if (token < kActionBase) return "instr" + std::to_string(token - kInstrBase);
    if (token < kActionBase + 8) return kActions[token - kActionBase];
    return "reserved" + std::to_string(token);
}

TaskStream generate_stream(Setup setup, int order, uint64_t seed, const BenchConfig& cfg) {
    MOILE_REQUIRE(order >= 1 && order <= 3, "generate_stream: order must be 1..3");
    TaskStream stream;
    stream.setup = setup;
    stream.order = order;
    stream.seed = seed;
    if (setup == Setup::HH) {
        for (Setup phase : hybrid_phase_order(order))
            stream.tasks.push_back(make_phase_task(phase, seed, cfg));
        return stream;
    }
    const Level level = setup_level(setup);
    for (const std::string& category : category_order(setup, order)) {
        stream.tasks.push_back(make_category_task(setup, category, level, seed, cfg.episodes_train,
                                                  cfg.episodes_eval, cfg));
        stream.tasks.back().spec.validate();
    }
    return stream;
}

Embedding frozen_encode(const Episode& ep, uint64_t encoder_seed, const BenchConfig& cfg) {
    const int half = cfg.d_embed / 2;
    Rng wrng(mix(encoder_seed, 0xE0C0DE));
    // fixed random affine maps; regenerated deterministically per call
    const Matrix wv = random_normal(half, cfg.feat_dim, 0.6, wrng);
    const Matrix bv = random_normal(half, 1, 0.3, wrng);
    const Matrix wt = random_normal(half, 32, 0.8, wrng);
    const Matrix bt = random_normal(half, 1, 0.3, wrng);

    Embedding out(2 * half, 0.0);
    for (int i = 0; i < half; ++i) {
        double acc = bv.at(i, 0);
        for (size_t f = 0; f < ep.features.size(); ++f) acc += wv.at(i, static_cast<int>(f)) * ep.features[f];
        out[i] = std::tanh(acc);
    }
    std::array<double, 32> hist{};
    for (int tok : ep.context) hist[tok] += 1.0;
    for (int i = 0; i < half; ++i) {
        double acc = bt.at(i, 0);
        for (int t = 0; t < 32; ++t) acc += wt.at(i, t) * hist[t];
        out[half + i] = std::tanh(acc);
    }
    return out;
}

std::vector<Episode> make_warmup_mix(const BenchConfig& cfg, uint64_t seed, int count) {
    std::vector<Episode> mix_set;
    // both levels, tables private to the warm-up seed
    const std::array<std::pair<const char*, Level>, 4> sources{{{"EXAMINE", Level::high},
                                                                {"KITCHENS", Level::high},
                                                                {"EXAMINE", Level::low},
                                                                {"KITCHENS", Level::low}}};
    int idx = 0;
    for (const auto& [cat, level] : sources) {
        const CategoryTables tables = build_tables(level, cat, mix(seed, 0x3A3), cfg);
        const int key_len = level == Level::high ? cfg.goal_len : cfg.instr_len;
        const int n = count / 4;
        const std::vector<uint64_t> codes =
            sample_tuple_codes(mix(seed, 0x3A4, idx), key_len, n);
        for (int i = 0; i < n; ++i)
            mix_set.push_back(make_episode(cat, level, codes[i], tables,
                                           mix(seed, 0x3A5, idx, i), cfg));
        ++idx;
    }
    return mix_set;
}

LearnabilityReport learnability_check(const TaskStream& stream, const ModelConfig& mcfg,
                                      const LearnabilityBudget& budget) {
    LearnabilityReport report;
    for (const Task& task : stream.tasks) {
        Model m = make_model(mcfg, AdapterArrangement::single_shared, mix(budget.seed, 0x17));
        // the adapter stays zero: the check trains the plain backbone
        for (Block& b : m.blocks) {
            PartitionedAdapter& pa = b.ff_up.token_experts[0];
            pa.b_res.value = Matrix(pa.b_res.value.rows, pa.b_res.value.cols);
        }
        WarmupConfig wcfg;
        wcfg.steps = budget.steps;
        wcfg.batch = budget.batch;
        wcfg.lr = budget.lr;
        wcfg.seed = mix(budget.seed, 0x18);
        warmup_backbone(m, task.train, wcfg);
        std::vector<Embedding> embs(task.eval.size(), Embedding(mcfg.d_embed, 0.0));
        const double acc = accuracy(m, task.eval, embs, false);
        report.rows.push_back({task.spec.category, task.spec.level, acc, acc >= budget.threshold});
        report.all_passed = report.all_passed && report.rows.back().passed;
    }
    return report;
}

} // namespace moile
