// SPDX-License-Identifier: Apache-2.0
#include "moile/model.hpp"

#include <algorithm>
#include <cmath>

namespace moile {

void ModelConfig::validate() const {
    MOILE_REQUIRE(vocab >= 2 && d_model >= 4 && d_ff >= 4, "ModelConfig: degenerate sizes");
    MOILE_REQUIRE(n_heads >= 1 && d_model % n_heads == 0, "ModelConfig: heads must divide d_model");
    MOILE_REQUIRE(lora_rank >= 1 && lora_rank <= std::min(d_ff, d_model) / 4,
                  "ModelConfig: lora rank out of the low-rank regime");
    MOILE_REQUIRE(top_k >= 1 && top_k <= n_token_experts, "ModelConfig: top_k out of range");
    MOILE_REQUIRE(n_task_experts >= 1, "ModelConfig: need at least one task expert");
    MOILE_REQUIRE(max_seq >= 4, "ModelConfig: max_seq too small");
}

std::vector<Param*> Model::backbone_params() {
    std::vector<Param*> out{&tok_emb, &pos_emb, &feat_proj, &head};
    for (Block& b : blocks) {
        out.push_back(&b.wq);
        out.push_back(&b.wk);
        out.push_back(&b.wv);
        out.push_back(&b.wo);
        out.push_back(&b.ff_up.w0);
        out.push_back(&b.ff_down);
    }
    return out;
}

std::vector<Param*> Model::adapter_params(bool include_task_branch) {
    std::vector<Param*> out;
    for (Block& b : blocks) {
        MoileLayer& l = b.ff_up;
        if (!l.single_shared) out.push_back(&l.token_router.weight);
        for (PartitionedAdapter& pa : l.token_experts) {
            if (!pa.has_residual()) continue;
            out.push_back(&pa.b_res);
            out.push_back(&pa.a_res);
        }
        if (include_task_branch && !l.single_shared) {
            out.push_back(&l.task_router.weight);
            for (PartitionedAdapter& pa : l.task_experts) {
                if (!pa.has_residual()) continue;
                out.push_back(&pa.b_res);
                out.push_back(&pa.a_res);
            }
        }
    }
    return out;
}

Model make_model(const ModelConfig& cfg, AdapterArrangement arrangement, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    Model m;
    m.cfg = cfg;
    m.arrangement = arrangement;
    m.tok_emb = Param("tok_emb", random_normal(cfg.d_model, cfg.vocab, cfg.backbone_init, rng));
    m.pos_emb = Param("pos_emb", random_normal(cfg.d_model, cfg.max_seq, cfg.backbone_init, rng));
    m.feat_proj = Param("feat_proj", random_normal(cfg.d_model, cfg.feat_dim, cfg.backbone_init, rng));
    m.head = Param("head", random_normal(cfg.vocab, cfg.d_model, cfg.backbone_init, rng));
    for (int bi = 0; bi < cfg.n_blocks; ++bi) {
        Block b;
        const std::string pre = "block" + std::to_string(bi) + ".";
        b.wq = Param(pre + "wq", random_normal(cfg.d_model, cfg.d_model, cfg.backbone_init, rng));
        b.wk = Param(pre + "wk", random_normal(cfg.d_model, cfg.d_model, cfg.backbone_init, rng));
        b.wv = Param(pre + "wv", random_normal(cfg.d_model, cfg.d_model, cfg.backbone_init, rng));
        b.wo = Param(pre + "wo", random_normal(cfg.d_model, cfg.d_model, cfg.backbone_init, rng));
        if (arrangement == AdapterArrangement::single_shared) {
            b.ff_up = make_single_adapter_layer(cfg.d_ff, cfg.d_model, cfg.lora_rank, cfg.adapter_init, rng);
        } else {
            b.ff_up = make_moile_layer(cfg.d_ff, cfg.d_model, cfg.lora_rank, cfg.n_token_experts,
                                       cfg.n_task_experts, cfg.top_k, cfg.d_embed, cfg.adapter_init,
                                       cfg.router_init, rng);
        }
        b.ff_up.w0.name = pre + "ff.w0";
        b.ff_up.w0.value = random_normal(cfg.d_ff, cfg.d_model, cfg.backbone_init, rng);
        b.ff_up.w0.zero_moments();
        b.ff_up.token_router.weight.name = pre + "ff.token_router";
        b.ff_up.task_router.weight.name = pre + "ff.task_router";
        for (size_t e = 0; e < b.ff_up.token_experts.size(); ++e) {
            b.ff_up.token_experts[e].b_res.name = pre + "ff.token_expert" + std::to_string(e) + ".b_res";
            b.ff_up.token_experts[e].a_res.name = pre + "ff.token_expert" + std::to_string(e) + ".a_res";
        }
        for (size_t e = 0; e < b.ff_up.task_experts.size(); ++e) {
            b.ff_up.task_experts[e].b_res.name = pre + "ff.task_expert" + std::to_string(e) + ".b_res";
            b.ff_up.task_experts[e].a_res.name = pre + "ff.task_expert" + std::to_string(e) + ".a_res";
        }
        b.ff_down = Param(pre + "ff_down", random_normal(cfg.d_model, cfg.d_ff, cfg.backbone_init, rng));
        m.blocks.push_back(std::move(b));
    }
    return m;
}

namespace {

Matrix causal_mask(int s) {
    Matrix mask(s, s);
    for (int key = 0; key < s; ++key)
        for (int query = 0; query < s; ++query)
            if (key > query) mask.at(key, query) = -1e9;
    return mask;
}

// Input columns: [projected features | embedded tokens], plus positions.
Tape::NodeId build_input(StepContext& ctx, Model& m, const Episode& ep,
                         const std::vector<int>& input_ids, bool train_backbone) {
    Tape& t = ctx.tape;
    MOILE_REQUIRE(static_cast<int>(ep.features.size()) == m.cfg.feat_dim,
                  "model: feature vector length mismatch");
    const int s = 1 + static_cast<int>(input_ids.size());
    MOILE_REQUIRE(s <= m.cfg.max_seq, "model: sequence longer than max_seq");
    for (int id : input_ids)
        MOILE_REQUIRE(id >= 0 && id < m.cfg.vocab, "model: token id out of vocabulary");

    auto weight = [&](Param& p) { return train_backbone ? ctx.param_leaf(p) : ctx.frozen_leaf(p.value); };
    Tape::NodeId feat = t.constant(Matrix::column(ep.features));
    Tape::NodeId prefix = t.matmul(weight(m.feat_proj), feat);
    Tape::NodeId embedded = t.gather_cols(weight(m.tok_emb), input_ids);
    Tape::NodeId x = t.hstack2(prefix, embedded);
    Tape::NodeId pos = t.slice_cols(weight(m.pos_emb), 0, s);
    return t.add(x, pos);
}

Tape::NodeId block_forward(StepContext& ctx, Model& m, Block& b, Tape::NodeId x,
                           const Embedding& task_emb, const ModelForwardOpts& opts,
                           LayerTrace* trace) {
    Tape& t = ctx.tape;
    const int s = t.value(x).cols;
    const int dh = m.cfg.d_model / m.cfg.n_heads;
    auto weight = [&](Param& p) {
        return opts.train_backbone ? ctx.param_leaf(p) : ctx.frozen_leaf(p.value);
    };

    // attention
    Tape::NodeId xn = t.rmsnorm_cols(x);
    Tape::NodeId q = t.matmul(weight(b.wq), xn);
    Tape::NodeId k = t.matmul(weight(b.wk), xn);
    Tape::NodeId v = t.matmul(weight(b.wv), xn);
    Tape::NodeId mask = t.constant(causal_mask(s));
    Tape::NodeId cat = -1;
    for (int h = 0; h < m.cfg.n_heads; ++h) {
        Tape::NodeId qh = t.slice_rows(q, h * dh, (h + 1) * dh);
        Tape::NodeId kh = t.slice_rows(k, h * dh, (h + 1) * dh);
        Tape::NodeId vh = t.slice_rows(v, h * dh, (h + 1) * dh);
        Tape::NodeId scores = t.scale(t.matmul(t.transpose(kh), qh), 1.0 / std::sqrt(double(dh)));
        Tape::NodeId weights = t.colwise_softmax(t.add(scores, mask));
        Tape::NodeId oh = t.matmul(vh, weights);
        cat = cat < 0 ? oh : t.vstack2(cat, oh);
    }
    x = t.add(x, t.matmul(weight(b.wo), cat));

    // adapted feed-forward
    Tape::NodeId ffn_in = t.rmsnorm_cols(x);
    LayerForwardOpts lopts;
    lopts.use_task_branch = opts.use_task_branch;
    lopts.adapters_active = opts.adapters_active;
    lopts.train_base = opts.train_backbone;
    Tape::NodeId up = layer_forward(ctx, b.ff_up, ffn_in, task_emb, lopts, trace);
    Tape::NodeId down = t.matmul(weight(b.ff_down), t.relu(up));
    return t.add(x, down);
}

} // namespace

Tape::NodeId model_forward(StepContext& ctx, Model& m, const Episode& ep, const Embedding& task_emb,
                           const ModelForwardOpts& opts) {
    Tape& t = ctx.tape;
    MOILE_REQUIRE(!ep.target.empty(), "model: target must hold at least one token");
    for (int id : ep.target)
        MOILE_REQUIRE(id >= 0 && id < m.cfg.vocab, "model: target token out of vocabulary");
    const int c = static_cast<int>(ep.context.size());
    const int l = static_cast<int>(ep.target.size());
    std::vector<int> input_ids = ep.context;
    input_ids.insert(input_ids.end(), ep.target.begin(), ep.target.end() - 1);

    Tape::NodeId x = build_input(ctx, m, ep, input_ids, opts.train_backbone);
    if (opts.traces) opts.traces->resize(m.blocks.size());
    for (size_t bi = 0; bi < m.blocks.size(); ++bi) {
        LayerTrace* trace = opts.traces ? &(*opts.traces)[bi] : nullptr;
        x = block_forward(ctx, m, m.blocks[bi], x, task_emb, opts, trace);
    }
    Tape::NodeId final_norm = t.rmsnorm_cols(x);
    auto head_leaf = opts.train_backbone ? ctx.param_leaf(m.head) : ctx.frozen_leaf(m.head.value);
    Tape::NodeId logits = t.matmul(head_leaf, final_norm);
    // prediction columns: the last context position and the teacher-forced targets
    return t.slice_cols(logits, c, c + l);
}

Matrix forward(Model& m, const Episode& ep, const Embedding& task_emb, bool use_task_branch) {
    StepContext ctx;
    ModelForwardOpts opts;
    opts.use_task_branch = use_task_branch;
    Tape::NodeId logits = model_forward(ctx, m, ep, task_emb, opts);
    return transpose(ctx.tape.value(logits));
}

double prediction_loss(const Matrix& logits, const std::vector<int>& targets) {
    MOILE_REQUIRE(logits.rows == static_cast<int>(targets.size()), "prediction_loss: row/target mismatch");
    double loss = 0.0;
    for (int i = 0; i < logits.rows; ++i) {
        std::vector<double> row(logits.cols);
        for (int j = 0; j < logits.cols; ++j) row[j] = logits.at(i, j);
        std::vector<double> probs = softmax(row);
        MOILE_REQUIRE(targets[i] >= 0 && targets[i] < logits.cols, "prediction_loss: target out of range");
        loss -= std::log(probs[targets[i]]);
    }
    return loss / logits.rows;
}

std::vector<int> greedy_decode(Model& m, const Episode& ep, const Embedding& task_emb,
                               bool use_task_branch) {
    std::vector<int> decoded;
    const int l = static_cast<int>(ep.target.size());
    for (int step = 0; step < l; ++step) {
        Episode partial = ep;
        partial.target = decoded;
        partial.target.push_back(0); // placeholder for the position being predicted
        StepContext ctx;
        ModelForwardOpts opts;
        opts.use_task_branch = use_task_branch;
        Tape::NodeId logits = model_forward(ctx, m, partial, task_emb, opts);
        const Matrix& lv = ctx.tape.value(logits);
        const int col = lv.cols - 1;
        int best = 0;
        for (int i = 1; i < lv.rows; ++i)
            if (lv.at(i, col) > lv.at(best, col)) best = i;
        decoded.push_back(best);
    }
    return decoded;
}

double accuracy(Model& m, const std::vector<Episode>& episodes,
                const std::vector<Embedding>& task_embs, bool use_task_branch) {
    MOILE_REQUIRE(!episodes.empty(), "accuracy: empty evaluation set");
    MOILE_REQUIRE(episodes.size() == task_embs.size(), "accuracy: embedding count mismatch");
    int correct = 0;
    for (size_t i = 0; i < episodes.size(); ++i) {
        const std::vector<int> decoded = greedy_decode(m, episodes[i], task_embs[i], use_task_branch);
        if (decoded == episodes[i].target) ++correct;
    }
    return static_cast<double>(correct) / episodes.size();
}

void warmup_backbone(Model& m, const std::vector<Episode>& mix, const WarmupConfig& cfg) {
    MOILE_REQUIRE(!mix.empty(), "warmup_backbone: empty episode mix");
    Rng rng(cfg.seed);
    AdamConfig adam;
    adam.lr = cfg.lr;
    const Embedding no_task(m.cfg.d_embed, 0.0);
    for (int step = 0; step < cfg.steps; ++step) {
        StepContext ctx;
        Tape::NodeId loss = -1;
        for (int bi = 0; bi < cfg.batch; ++bi) {
            const Episode& ep = mix[rng.uniform_int(static_cast<int>(mix.size()))];
            ModelForwardOpts opts;
            opts.adapters_active = false;
            opts.train_backbone = true;
            Tape::NodeId logits = model_forward(ctx, m, ep, no_task, opts);
            Tape::NodeId ce = ctx.tape.cross_entropy_cols(logits, ep.target);
            loss = loss < 0 ? ce : ctx.tape.add(loss, ce);
        }
        loss = ctx.tape.scale(loss, 1.0 / cfg.batch);
        ctx.tape.backward(loss);
        for (auto& [param, id] : ctx.params()) adam_step(*param, ctx.tape.grad(id), adam);
    }
    // optimizer state is warm-up local
    for (Param* p : m.backbone_params()) p->zero_moments();
}

} // namespace moile
