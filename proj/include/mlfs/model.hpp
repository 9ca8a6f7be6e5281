#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "arch.hpp"
#include "lora.hpp"
#include "rng.hpp"
#include "task.hpp"
#include "tensor.hpp"

namespace mlfs {

constexpr int kNumStages = 3;

struct ModelDims {
    std::size_t d = 0, h = 0, f = 0, L = 0;
    std::size_t vocab = 0, max_seq = 0, n_out = 0;

    ArchConfig max_config() const { return {d, h, f, L}; }
};

// full-width pre-trained block weights; every matrix is used as x @ W
struct LayerWeights {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor w1, b1, w2, b2;
};

// stage-indexed adapter stacks for the four adapted matrices of one block
struct LayerAdapters {
    AdapterStack q, k, v, ffn1;
};

// weights of one operating point, ready to run; produced by projection
// (graph-connected tensors) or materialization (detached leaves)
struct EffectiveWeights {
    ArchConfig c;
    TaskKind task = TaskKind::classify;
    std::size_t vocab = 0, max_seq = 0, n_out = 0;
    Tensor tok_emb, pos_emb;  // (vocab, d_c), (max_seq, d_c)
    std::vector<LayerWeights> layers;
    Tensor lnf_g, lnf_b;
    Tensor head_w, head_b;
};

struct ForwardOutput {
    Tensor logits;
    Tensor yhat;                   // softmax of logits
    std::vector<Tensor> features;  // post-block hidden states, one per kept layer
};

// ---------------------------------------------------------------------------

class Supernet {
public:
    ModelDims dims;
    TaskKind task = TaskKind::classify;
    std::size_t rank = 0;

    Tensor tok_emb, pos_emb;
    std::vector<LayerWeights> layers;
    Tensor lnf_g, lnf_b;
    Tensor head_w, head_b;
    std::vector<LayerAdapters> adapters;  // one entry per layer

    static Supernet create(const ModelDims& dims, TaskKind task, std::size_t rank, std::uint64_t seed) {
        if (dims.d == 0 || dims.h == 0 || dims.f == 0 || dims.L == 0 || dims.vocab == 0 || dims.max_seq == 0 ||
            dims.n_out == 0)
            throw ConfigError("supernet: zero extent in model dims");
        if (dims.d % dims.h != 0)
            throw ConfigError("supernet: heads " + std::to_string(dims.h) + " must divide d=" +
                              std::to_string(dims.d));
        Supernet net;
        net.dims = dims;
        net.task = task;
        net.rank = rank;
        Rng root(seed);
        double wd = 1.0 / std::sqrt(static_cast<double>(dims.d));
        double wf = 1.0 / std::sqrt(static_cast<double>(dims.f));
        Rng r_emb = root.fork(1);
        net.tok_emb = Tensor::uniform({dims.vocab, dims.d}, -wd, wd, r_emb);
        net.pos_emb = Tensor::uniform({dims.max_seq, dims.d}, -wd, wd, r_emb);
        for (std::size_t l = 0; l < dims.L; ++l) {
            Rng rl = root.fork(100 + l);
            LayerWeights w;
            w.ln1_g = Tensor::full({dims.d}, 1.0);
            w.ln1_b = Tensor::zeros({dims.d});
            w.wq = Tensor::uniform({dims.d, dims.d}, -wd, wd, rl);
            w.bq = Tensor::zeros({dims.d});
            w.wk = Tensor::uniform({dims.d, dims.d}, -wd, wd, rl);
            w.bk = Tensor::zeros({dims.d});
            w.wv = Tensor::uniform({dims.d, dims.d}, -wd, wd, rl);
            w.bv = Tensor::zeros({dims.d});
            w.wo = Tensor::uniform({dims.d, dims.d}, -wd, wd, rl);
            w.bo = Tensor::zeros({dims.d});
            w.ln2_g = Tensor::full({dims.d}, 1.0);
            w.ln2_b = Tensor::zeros({dims.d});
            w.w1 = Tensor::uniform({dims.d, dims.f}, -wd, wd, rl);
            w.b1 = Tensor::zeros({dims.f});
            w.w2 = Tensor::uniform({dims.f, dims.d}, -wf, wf, rl);
            w.b2 = Tensor::zeros({dims.d});
            net.layers.push_back(std::move(w));

            Rng ra = root.fork(1000 + l);
            LayerAdapters ad;
            ad.q = make_stack(dims.d, dims.d, rank, kNumStages, ra);
            ad.k = make_stack(dims.d, dims.d, rank, kNumStages, ra);
            ad.v = make_stack(dims.d, dims.d, rank, kNumStages, ra);
            ad.ffn1 = make_stack(dims.d, dims.f, rank, kNumStages, ra);
            net.adapters.push_back(std::move(ad));
        }
        net.lnf_g = Tensor::full({dims.d}, 1.0);
        net.lnf_b = Tensor::zeros({dims.d});
        Rng rh = root.fork(2);
        net.head_w = Tensor::uniform({dims.d, dims.n_out}, -wd, wd, rh);
        net.head_b = Tensor::zeros({dims.n_out});
        return net;
    }

    std::size_t head_dim() const { return dims.d / dims.h; }

    // frozen backbone, shared across tasks
    std::vector<std::pair<std::string, Tensor>> base_named() const {
        std::vector<std::pair<std::string, Tensor>> out;
        out.emplace_back("tok_emb", tok_emb);
        out.emplace_back("pos_emb", pos_emb);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const LayerWeights& w = layers[l];
            std::string p = "L" + std::to_string(l) + ".";
            out.emplace_back(p + "ln1.g", w.ln1_g);
            out.emplace_back(p + "ln1.b", w.ln1_b);
            out.emplace_back(p + "wq", w.wq);
            out.emplace_back(p + "bq", w.bq);
            out.emplace_back(p + "wk", w.wk);
            out.emplace_back(p + "bk", w.bk);
            out.emplace_back(p + "wv", w.wv);
            out.emplace_back(p + "bv", w.bv);
            out.emplace_back(p + "wo", w.wo);
            out.emplace_back(p + "bo", w.bo);
            out.emplace_back(p + "ln2.g", w.ln2_g);
            out.emplace_back(p + "ln2.b", w.ln2_b);
            out.emplace_back(p + "w1", w.w1);
            out.emplace_back(p + "b1", w.b1);
            out.emplace_back(p + "w2", w.w2);
            out.emplace_back(p + "b2", w.b2);
        }
        out.emplace_back("lnf.g", lnf_g);
        out.emplace_back("lnf.b", lnf_b);
        return out;
    }

    // task-specific trainables: all stage pairs plus the head
    std::vector<std::pair<std::string, Tensor>> adapter_named() const {
        std::vector<std::pair<std::string, Tensor>> out;
        for (std::size_t l = 0; l < adapters.size(); ++l) {
            const LayerAdapters& ad = adapters[l];
            std::string p = "L" + std::to_string(l) + ".";
            auto emit = [&](const char* tag, const AdapterStack& st) {
                for (std::size_t s = 0; s < st.pairs.size(); ++s) {
                    out.emplace_back(p + tag + ".a" + std::to_string(s), st.pairs[s].a);
                    out.emplace_back(p + tag + ".b" + std::to_string(s), st.pairs[s].b);
                }
            };
            emit("q", ad.q);
            emit("k", ad.k);
            emit("v", ad.v);
            emit("ffn1", ad.ffn1);
        }
        out.emplace_back("head.w", head_w);
        out.emplace_back("head.b", head_b);
        return out;
    }

    void set_base_trainable(bool on) {
        for (auto& [name, t] : base_named()) t.set_requires_grad(on);
        head_w.set_requires_grad(on);
        head_b.set_requires_grad(on);
    }

    // marks exactly stage `s` pairs (plus the head) trainable and returns them
    std::vector<Tensor> stage_trainables(int s) {
        if (s < 0 || s >= kNumStages) throw ContractError("stage_trainables: stage " + std::to_string(s));
        std::vector<Tensor> out;
        for (LayerAdapters& ad : adapters) {
            for (AdapterStack* st : {&ad.q, &ad.k, &ad.v, &ad.ffn1}) {
                for (std::size_t k = 0; k < st->pairs.size(); ++k) {
                    bool on = static_cast<int>(k) == s;
                    st->pairs[k].a.set_requires_grad(on);
                    st->pairs[k].b.set_requires_grad(on);
                    if (on) {
                        out.push_back(st->pairs[k].a);
                        out.push_back(st->pairs[k].b);
                    }
                }
            }
        }
        head_w.set_requires_grad(true);
        head_b.set_requires_grad(true);
        out.push_back(head_w);
        out.push_back(head_b);
        return out;
    }
};

// ---------------------------------------------------------------------------
// projection: supernet -> one operating point

namespace detail {

inline Tensor eff_weight(const Tensor& w, const AdapterStack& st, int stage, std::size_t rc, std::size_t cc) {
    if (stage < 0) return slice_leading(w, {rc, cc});
    return compose_sliced(w, st, stage, rc, cc);
}

}  // namespace detail

inline void check_projectable(const Supernet& net, const ArchConfig& c) {
    const ModelDims& m = net.dims;
    if (c.d == 0 || c.h == 0 || c.f == 0 || c.L == 0)
        throw ConfigError("project: zero extent in config " + c.str());
    if (c.d > m.d || c.f > m.f || c.h > m.h || c.L > m.L)
        throw ConfigError("project: config " + c.str() + " exceeds the supernet " + m.max_config().str());
    if (c.d % c.h != 0 || c.d / c.h != net.head_dim())
        throw ConfigError("project: config " + c.str() + " breaks the fixed per-head width " +
                          std::to_string(net.head_dim()));
}

// stage: -1 keeps only the frozen base, s >= 0 adds adapter deltas 0..s
inline EffectiveWeights project_weights(const Supernet& net, const ArchConfig& c, int stage) {
    check_projectable(net, c);
    if (stage >= kNumStages) throw ContractError("project: stage " + std::to_string(stage));
    EffectiveWeights W;
    W.c = c;
    W.task = net.task;
    W.vocab = net.dims.vocab;
    W.max_seq = net.dims.max_seq;
    W.n_out = net.dims.n_out;
    W.tok_emb = slice_leading(net.tok_emb, {net.dims.vocab, c.d});
    W.pos_emb = slice_leading(net.pos_emb, {net.dims.max_seq, c.d});
    for (std::size_t m : retained_layers(c.L, net.dims.L)) {
        const LayerWeights& src = net.layers[m - 1];
        const LayerAdapters& ad = net.adapters[m - 1];
        LayerWeights w;
        w.ln1_g = slice_leading(src.ln1_g, {c.d});
        w.ln1_b = slice_leading(src.ln1_b, {c.d});
        w.wq = detail::eff_weight(src.wq, ad.q, stage, c.d, c.d);
        w.bq = slice_leading(src.bq, {c.d});
        w.wk = detail::eff_weight(src.wk, ad.k, stage, c.d, c.d);
        w.bk = slice_leading(src.bk, {c.d});
        w.wv = detail::eff_weight(src.wv, ad.v, stage, c.d, c.d);
        w.bv = slice_leading(src.bv, {c.d});
        w.wo = slice_leading(src.wo, {c.d, c.d});
        w.bo = slice_leading(src.bo, {c.d});
        w.ln2_g = slice_leading(src.ln2_g, {c.d});
        w.ln2_b = slice_leading(src.ln2_b, {c.d});
        w.w1 = detail::eff_weight(src.w1, ad.ffn1, stage, c.d, c.f);
        w.b1 = slice_leading(src.b1, {c.f});
        w.w2 = slice_leading(src.w2, {c.f, c.d});
        w.b2 = slice_leading(src.b2, {c.d});
        W.layers.push_back(std::move(w));
    }
    W.lnf_g = slice_leading(net.lnf_g, {c.d});
    W.lnf_b = slice_leading(net.lnf_b, {c.d});
    W.head_w = slice_leading(net.head_w, {c.d, net.dims.n_out});
    W.head_b = net.head_b;
    return W;
}

// fresh leaves with the same values, cut off from any graph
inline EffectiveWeights detach_weights(const EffectiveWeights& src) {
    EffectiveWeights W = src;
    W.tok_emb = W.tok_emb.detach();
    W.pos_emb = W.pos_emb.detach();
    for (LayerWeights& w : W.layers) {
        for (Tensor* t : {&w.ln1_g, &w.ln1_b, &w.wq, &w.bq, &w.wk, &w.bk, &w.wv, &w.bv, &w.wo, &w.bo,
                          &w.ln2_g, &w.ln2_b, &w.w1, &w.b1, &w.w2, &w.b2})
            *t = t->detach();
    }
    W.lnf_g = W.lnf_g.detach();
    W.lnf_b = W.lnf_b.detach();
    W.head_w = W.head_w.detach();
    W.head_b = W.head_b.detach();
    return W;
}

// standalone copy: same values as projection, detached from the supernet
inline EffectiveWeights materialize_subnet(const Supernet& net, const ArchConfig& c, int stage) {
    return detach_weights(project_weights(net, c, stage));
}

inline std::vector<std::pair<std::string, Tensor>> effective_named(const EffectiveWeights& W) {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("tok_emb", W.tok_emb);
    out.emplace_back("pos_emb", W.pos_emb);
    for (std::size_t l = 0; l < W.layers.size(); ++l) {
        const LayerWeights& w = W.layers[l];
        std::string p = "L" + std::to_string(l) + ".";
        out.emplace_back(p + "ln1.g", w.ln1_g);
        out.emplace_back(p + "ln1.b", w.ln1_b);
        out.emplace_back(p + "wq", w.wq);
        out.emplace_back(p + "bq", w.bq);
        out.emplace_back(p + "wk", w.wk);
        out.emplace_back(p + "bk", w.bk);
        out.emplace_back(p + "wv", w.wv);
        out.emplace_back(p + "bv", w.bv);
        out.emplace_back(p + "wo", w.wo);
        out.emplace_back(p + "bo", w.bo);
        out.emplace_back(p + "ln2.g", w.ln2_g);
        out.emplace_back(p + "ln2.b", w.ln2_b);
        out.emplace_back(p + "w1", w.w1);
        out.emplace_back(p + "b1", w.b1);
        out.emplace_back(p + "w2", w.w2);
        out.emplace_back(p + "b2", w.b2);
    }
    out.emplace_back("lnf.g", W.lnf_g);
    out.emplace_back("lnf.b", W.lnf_b);
    out.emplace_back("head.w", W.head_w);
    out.emplace_back("head.b", W.head_b);
    return out;
}

// every tensor of a standalone model, for full-parameter training
inline std::vector<Tensor> effective_tensors(EffectiveWeights& W) {
    std::vector<Tensor> out;
    for (auto& [name, t] : effective_named(W)) out.push_back(t);
    return out;
}

// ---------------------------------------------------------------------------
// forward

inline Tensor causal_mask(std::size_t T) {
    Tensor m = Tensor::zeros({T, T});
    for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = i + 1; j < T; ++j) m.values_mut()[i * T + j] = -1e30;
    return m;
}

inline ForwardOutput forward_model(const EffectiveWeights& W, const Batch& x) {
    std::size_t B = x.batch, T = x.seq;
    std::size_t d = W.c.d, h = W.c.h, dh = W.c.d / W.c.h;
    if (B == 0 || T == 0) throw ShapeError("forward: empty batch");
    if (x.inputs.size() != B * T)
        throw ShapeError("forward: " + std::to_string(x.inputs.size()) + " tokens for batch " +
                         std::to_string(B) + " x seq " + std::to_string(T));
    if (T > W.max_seq)
        throw ShapeError("forward: sequence length " + std::to_string(T) + " exceeds max_seq " +
                         std::to_string(W.max_seq));

    Tensor hidden = add(embedding_lookup(W.tok_emb, x.inputs, B, T), slice_leading(W.pos_emb, {T, d}));
    bool causal = (W.task == TaskKind::char_lm);
    Tensor mask = causal ? causal_mask(T) : Tensor();
    double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    ForwardOutput out;
    for (const LayerWeights& L : W.layers) {
        Tensor n1 = layer_norm(hidden, L.ln1_g, L.ln1_b);
        Tensor q = add(matmul(n1, L.wq), L.bq);
        Tensor k = add(matmul(n1, L.wk), L.bk);
        Tensor v = add(matmul(n1, L.wv), L.bv);
        q = permute(reshape(q, {B, T, h, dh}), {0, 2, 1, 3});
        k = permute(reshape(k, {B, T, h, dh}), {0, 2, 1, 3});
        v = permute(reshape(v, {B, T, h, dh}), {0, 2, 1, 3});
        Tensor scores = scale(matmul(q, permute(k, {0, 1, 3, 2})), inv_sqrt_dh);  // (B,h,T,T)
        if (causal) scores = add(scores, mask);
        Tensor ctx = matmul(softmax(scores), v);  // (B,h,T,dh)
        ctx = reshape(permute(ctx, {0, 2, 1, 3}), {B, T, d});
        hidden = add(hidden, add(matmul(ctx, L.wo), L.bo));
        Tensor n2 = layer_norm(hidden, L.ln2_g, L.ln2_b);
        Tensor ff = add(matmul(gelu(add(matmul(n2, L.w1), L.b1)), L.w2), L.b2);
        hidden = add(hidden, ff);
        out.features.push_back(hidden);
    }
    Tensor xf = layer_norm(hidden, W.lnf_g, W.lnf_b);
    if (W.task == TaskKind::classify)
        out.logits = add(matmul(mean_axis(xf, 1), W.head_w), W.head_b);
    else
        out.logits = add(matmul(xf, W.head_w), W.head_b);
    out.yhat = softmax(out.logits);
    return out;
}

inline ForwardOutput supernet_forward(const Supernet& net, const ArchConfig& c, int stage, const Batch& x) {
    return forward_model(project_weights(net, c, stage), x);
}

// ---------------------------------------------------------------------------
// trainable element count for one operating point at one stage

inline std::size_t param_count(const Supernet& net, const ArchConfig& c, int stage, std::size_t d_low = 0,
                               std::size_t bank_entries = 0) {
    check_projectable(net, c);
    if (stage < 0 || stage >= kNumStages) throw ContractError("param_count: stage " + std::to_string(stage));
    std::size_t r = net.rank;
    std::size_t per_layer = 3 * pair_param_count(c.d, c.d, r) + pair_param_count(c.d, c.f, r);
    std::size_t n = retained_layers(c.L, net.dims.L).size() * per_layer;
    n += bank_entries * d_low * c.d;
    n += c.d * net.dims.n_out + net.dims.n_out;
    return n;
}

}  // namespace mlfs
