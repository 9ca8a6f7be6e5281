#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "arch.hpp"
#include "distill.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "optim.hpp"
#include "sampler.hpp"
#include "synthetic.hpp"
#include "tensor.hpp"

namespace mlfs {

// (n1/nj)^gamma, the gradient boost for small subnets
inline double gradient_scale(std::size_t n1, std::size_t nj, double gamma) {
    if (nj == 0) throw ContractError("gradient_scale: subnet parameter count 0");
    if (n1 < nj)
        throw ContractError("gradient_scale: reference count " + std::to_string(n1) + " below subnet count " +
                            std::to_string(nj));
    return std::pow(static_cast<double>(n1) / static_cast<double>(nj), gamma);
}

struct TrainPlan {
    double lr = 1e-3;
    double weight_decay = 0.0;
    std::size_t batch = 8;
    std::size_t pretrain_epochs = 1;
    std::size_t distill_epochs = 2;
    StagePlan stages;
    double gamma = 1.0;
    bool grad_scaling = true;
    std::uint64_t seed = 0;
    DistillConfig distill;

    AdamWConfig optim() const {
        AdamWConfig cfg;
        cfg.lr = lr;
        cfg.weight_decay = weight_decay;
        return cfg;
    }
};

inline void validate_plan(const TrainPlan& plan, std::size_t L_max) {
    if (plan.gamma < 1.0) throw ConfigError("train plan: gamma must be >= 1");
    if (plan.batch == 0) throw ConfigError("train plan: batch size 0");
    if (!(plan.lr > 0.0)) throw ConfigError("train plan: lr must be > 0");
    validate_distill(plan.distill, L_max);
}

// order-independent fingerprint input: value bits and shape, FNV-1a folded
inline std::uint64_t tensor_fingerprint(const Tensor& t) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::uint64_t b) {
        h ^= b;
        h *= 1099511628211ull;
    };
    for (std::size_t e : t.shape()) mix(e);
    for (double v : t.values()) {
        std::uint64_t b;
        std::memcpy(&b, &v, sizeof(b));
        mix(b);
    }
    return h;
}

inline std::vector<std::uint64_t> fingerprint_all(const std::vector<std::pair<std::string, Tensor>>& named) {
    std::vector<std::uint64_t> out;
    out.reserve(named.size());
    for (const auto& [name, t] : named) out.push_back(tensor_fingerprint(t));
    return out;
}

// ---------------------------------------------------------------------------
// evaluation

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};

inline EvalResult evaluate_weights(const EffectiveWeights& W, const Dataset& ds, std::size_t batch) {
    if (ds.size() == 0) throw ContractError("evaluate: empty dataset");
    if (batch == 0) throw ContractError("evaluate: batch size 0");
    std::vector<std::size_t> order(ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    double loss_sum = 0.0;
    std::size_t rows = 0, hits = 0;
    for (std::size_t start = 0; start < ds.size(); start += batch) {
        std::size_t count = std::min(batch, ds.size() - start);
        Batch b = make_batch(ds, order, start, count);
        ForwardOutput out = forward_model(W, b);
        std::size_t n_cls = out.logits.shape().back();
        std::size_t n_rows = out.logits.size() / n_cls;
        loss_sum += cross_entropy(out.logits, b.targets).item() * static_cast<double>(n_rows);
        const std::vector<double>& lv = out.logits.values();
        for (std::size_t r = 0; r < n_rows; ++r) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < n_cls; ++k)
                if (lv[r * n_cls + k] > lv[r * n_cls + best]) best = k;
            if (static_cast<int>(best) == b.targets[r]) ++hits;
        }
        rows += n_rows;
    }
    return {loss_sum / static_cast<double>(rows), static_cast<double>(hits) / static_cast<double>(rows)};
}

inline EvalResult evaluate(const Supernet& net, const ArchConfig& c, int stage, const Dataset& ds,
                           std::size_t batch) {
    return evaluate_weights(materialize_subnet(net, c, stage), ds, batch);
}

// ---------------------------------------------------------------------------
// one staged training step

struct StepOutcome {
    std::vector<MetricsRow> rows;  // one per sampled subnet
    double mean_total = 0.0;
};

namespace detail {

inline double l2_norm(const std::vector<std::vector<double>>& gs) {
    double s = 0.0;
    for (const std::vector<double>& g : gs)
        for (double v : g) s += v * v;
    return std::sqrt(s);
}

}  // namespace detail

// one optimizer step over the stage trainables: forward each sampled subnet
// (maxnet leads and trains on the task loss alone), backprop each loss,
// assemble sum_j (n1/nj)^gamma g_j / K, then step. Parameter counts for the
// scale include every subnet's projection slices so the maxnet count stays
// the largest.
inline StepOutcome mlfs_step(Supernet& net, const ConfigSpace& space, const TrainPlan& plan, const Batch& batch,
                             int stage, const std::vector<ArchConfig>& subnets, ProjectionBank& bank,
                             AdamW& opt, std::size_t global_step, double lr_scale,
                             std::vector<std::vector<double>>* out_update = nullptr) {
    if (subnets.empty()) throw ContractError("mlfs_step: no subnets sampled");
    if (subnets.front() != space.maxnet()) throw ContractError("mlfs_step: the maxnet must be sampled first");
    const std::size_t L_max = net.dims.L;
    const std::size_t d_low = bank.d_low();
    const std::size_t bank_entries = bank.subset().size();
    const std::size_t n1 = param_count(net, space.maxnet(), stage, d_low, bank_entries);
    const std::vector<Tensor>& params = opt.params();
    const double inv_k = 1.0 / static_cast<double>(subnets.size());

    std::vector<std::vector<double>> update(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) update[i].assign(params[i].size(), 0.0);

    StepOutcome oc;
    ForwardOutput max_out;
    for (std::size_t j = 0; j < subnets.size(); ++j) {
        const ArchConfig& c = subnets[j];
        bool is_max = (j == 0);
        ForwardOutput out = supernet_forward(net, c, stage, batch);
        if (is_max) max_out = out;
        LossBundle lb = combined_loss(out, is_max ? nullptr : &max_out, batch, plan.distill, c, L_max,
                                      is_max ? nullptr : &bank, is_max);
        opt.zero_grad();
        lb.total.backward();
        double sc = 1.0;
        if (plan.grad_scaling)
            sc = gradient_scale(n1, param_count(net, c, stage, d_low, bank_entries), plan.gamma);
        std::vector<std::vector<double>> gj(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (params[i].has_grad())
                gj[i] = params[i].grad();
            else
                gj[i].assign(params[i].size(), 0.0);
            for (std::size_t e = 0; e < gj[i].size(); ++e) update[i][e] += sc * inv_k * gj[i][e];
        }
        oc.mean_total += lb.total.item() * inv_k;
        oc.rows.push_back(step_row(global_step, stage, c.str(), lb.task, lb.kd, lb.fd, lb.total.item(), sc,
                                   detail::l2_norm(gj), lr_scale));
    }
    if (out_update) *out_update = update;
    opt.step_with(update, lr_scale);
    return oc;
}

// ---------------------------------------------------------------------------
// teacher pretraining: full-parameter task training of the maxnet backbone

inline std::vector<MetricsRow> pretrain_teacher(Supernet& net, const Dataset& train, const Dataset& val,
                                                const TrainPlan& plan) {
    if (plan.batch == 0) throw ConfigError("pretrain: batch size 0");
    if (plan.pretrain_epochs == 0) throw ConfigError("pretrain: need at least one epoch");
    ArchConfig maxc = net.dims.max_config();
    net.set_base_trainable(true);
    std::vector<Tensor> params;
    for (auto& [name, t] : net.base_named()) params.push_back(t);
    params.push_back(net.head_w);
    params.push_back(net.head_b);
    AdamW opt(params, plan.optim());

    std::size_t spe = steps_per_epoch(train.size(), plan.batch);
    std::size_t total = plan.pretrain_epochs * spe;
    Rng root(plan.seed);
    std::vector<MetricsRow> rows;
    std::size_t global = 0;
    for (std::size_t epoch = 0; epoch < plan.pretrain_epochs; ++epoch) {
        std::vector<std::size_t> perm = root.fork(500 + epoch).permutation(train.size());
        for (std::size_t start = 0; start < train.size(); start += plan.batch) {
            std::size_t count = std::min(plan.batch, train.size() - start);
            Batch b = make_batch(train, perm, start, count);
            ForwardOutput out = supernet_forward(net, maxc, -1, b);
            Tensor loss = cross_entropy(out.logits, b.targets);
            opt.zero_grad();
            loss.backward();
            double lrs = cosine_decay(global, total);
            double gn = 0.0;
            for (const Tensor& p : opt.params())
                if (p.has_grad())
                    for (double v : p.grad()) gn += v * v;
            opt.step(lrs);
            rows.push_back(step_row(global, -1, maxc.str(), loss.item(), 0.0, 0.0, loss.item(), 1.0,
                                    std::sqrt(gn), lrs));
            ++global;
        }
        EvalResult ev = evaluate(net, maxc, -1, val, plan.batch);
        rows.push_back(eval_row(global, -1, maxc.str(), "val", ev.loss, ev.accuracy));
    }
    net.set_base_trainable(false);
    return rows;
}

// ---------------------------------------------------------------------------
// the staged run

struct SupernetRun {
    std::vector<MetricsRow> rows;
    std::size_t steps = 0;
};

inline SupernetRun train_supernet(Supernet& net, const ConfigSpace& space, const Dataset& train,
                                  const Dataset& val, const TrainPlan& plan, ProjectionBank& bank,
                                  const std::function<void(int, std::size_t)>& on_stage_end = nullptr) {
    ArchConfig maxc = space.maxnet();
    if (maxc.d != net.dims.d || maxc.h != net.dims.h || maxc.f != net.dims.f || maxc.L != net.dims.L)
        throw ConfigError("train: space maxnet " + maxc.str() + " does not match the supernet " +
                          net.dims.max_config().str());
    if (train.task != net.task) throw ConfigError("train: dataset task does not match the model");
    if (train.n_out != net.dims.n_out)
        throw ConfigError("train: dataset has " + std::to_string(train.n_out) + " outputs, model has " +
                          std::to_string(net.dims.n_out));
    validate_plan(plan, net.dims.L);
    net.set_base_trainable(false);

    std::size_t spe = steps_per_epoch(train.size(), plan.batch);
    std::size_t total = total_steps(plan.stages, spe);
    Rng root(plan.seed);
    Rng sample_rng = root.fork(11);

    SupernetRun run;
    std::size_t global = 0, epoch_counter = 0;
    for (int stage = 0; stage < kNumStages; ++stage) {
        std::vector<Tensor> trainables = net.stage_trainables(stage);
        for (Tensor& u : bank.tensors(true)) trainables.push_back(u);
        AdamW opt(trainables, plan.optim());
        // small stage grids cannot fill K distinct subnets; use what exists
        std::size_t k_eff = std::min(plan.stages.subnets_per_step, space.stage_members(stage).size());
        for (std::size_t e = 0; e < plan.stages.epochs[stage]; ++e, ++epoch_counter) {
            std::vector<std::size_t> perm = root.fork(1000 + epoch_counter).permutation(train.size());
            for (std::size_t start = 0; start < train.size(); start += plan.batch) {
                std::size_t count = std::min(plan.batch, train.size() - start);
                Batch b = make_batch(train, perm, start, count);
                std::vector<ArchConfig> subnets =
                    sample_subnets(space, stage, k_eff, plan.stages.policy, sample_rng);
                double lrs = cosine_decay(global, total);
                StepOutcome oc = mlfs_step(net, space, plan, b, stage, subnets, bank, opt, global, lrs);
                for (MetricsRow& r : oc.rows) run.rows.push_back(std::move(r));
                ++global;
            }
            for (const ArchConfig& c : {space.maxnet(), space.minnet()}) {
                EvalResult ev = evaluate(net, c, stage, val, plan.batch);
                run.rows.push_back(eval_row(global, stage, c.str(), "val", ev.loss, ev.accuracy));
            }
        }
        if (on_stage_end) on_stage_end(stage, global);
    }
    run.steps = global;
    return run;
}

// ---------------------------------------------------------------------------
// single-student distillation

// fixed-size student: frozen sliced backbone, one fresh adapter pair per
// adapted matrix, trainable projections and head
struct StudentModel {
    ArchConfig c;
    EffectiveWeights base;
    std::vector<LayerAdapters> adapters;  // single-stage stacks
    ProjectionBank bank;                  // full-width rows shared with the teacher side
};

inline StudentModel make_student(const Supernet& net, const ArchConfig& c, int stage, std::size_t rank,
                                 const ProjectionBank& teacher_bank, bool bank_from_teacher,
                                 std::uint64_t seed) {
    StudentModel s;
    s.c = c;
    s.base = materialize_subnet(net, c, stage);
    Rng root(seed);
    for (std::size_t l = 0; l < c.L; ++l) {
        Rng rl = root.fork(5000 + l);
        LayerAdapters ad;
        ad.q = make_stack(c.d, c.d, rank, 1, rl);
        ad.k = make_stack(c.d, c.d, rank, 1, rl);
        ad.v = make_stack(c.d, c.d, rank, 1, rl);
        ad.ffn1 = make_stack(c.d, c.f, rank, 1, rl);
        s.adapters.push_back(std::move(ad));
    }
    if (bank_from_teacher) {
        s.bank = teacher_bank.clone_detached();
    } else {
        Rng rb = root.fork(7);
        s.bank = ProjectionBank(teacher_bank.d_low(), teacher_bank.d_max(), teacher_bank.subset(), rb);
    }
    return s;
}

// adapter deltas folded onto the frozen backbone, on the graph
inline EffectiveWeights student_effective(const StudentModel& s) {
    EffectiveWeights W = s.base;
    for (std::size_t l = 0; l < W.layers.size(); ++l) {
        W.layers[l].wq = compose(s.base.layers[l].wq, s.adapters[l].q, 0);
        W.layers[l].wk = compose(s.base.layers[l].wk, s.adapters[l].k, 0);
        W.layers[l].wv = compose(s.base.layers[l].wv, s.adapters[l].v, 0);
        W.layers[l].w1 = compose(s.base.layers[l].w1, s.adapters[l].ffn1, 0);
    }
    return W;
}

inline EffectiveWeights merge_student(const StudentModel& s) { return detach_weights(student_effective(s)); }

inline std::vector<Tensor> student_trainables(StudentModel& s) {
    std::vector<Tensor> out;
    for (LayerAdapters& ad : s.adapters)
        for (AdapterStack* st : {&ad.q, &ad.k, &ad.v, &ad.ffn1}) {
            st->pairs[0].a.set_requires_grad(true);
            st->pairs[0].b.set_requires_grad(true);
            out.push_back(st->pairs[0].a);
            out.push_back(st->pairs[0].b);
        }
    s.base.head_w.set_requires_grad(true);
    s.base.head_b.set_requires_grad(true);
    out.push_back(s.base.head_w);
    out.push_back(s.base.head_b);
    for (Tensor& u : s.bank.tensors(true)) out.push_back(u);
    return out;
}

struct DistillRun {
    std::vector<MetricsRow> rows;
    double final_val_loss = 0.0;
};

// teacher frozen at its final stage; the student trains its pair, head and
// projections on (1-alpha) task + alpha (kd + fd)
inline DistillRun distill_student(const Supernet& teacher, const ConfigSpace& space, StudentModel& student,
                                  const Dataset& train, const Dataset& val, const TrainPlan& plan) {
    validate_plan(plan, teacher.dims.L);
    if (plan.distill_epochs == 0) throw ConfigError("distill: need at least one epoch");
    if (student.c.d > teacher.dims.d || student.c.L > teacher.dims.L)
        throw ConfigError("distill: student " + student.c.str() + " exceeds the teacher");
    EffectiveWeights WT = materialize_subnet(teacher, space.maxnet(), kNumStages - 1);
    std::vector<Tensor> trainables = student_trainables(student);
    AdamW opt(trainables, plan.optim());

    std::size_t spe = steps_per_epoch(train.size(), plan.batch);
    std::size_t total = plan.distill_epochs * spe;
    Rng root(plan.seed);
    DistillRun run;
    EvalResult ev0 = evaluate_weights(merge_student(student), val, plan.batch);
    run.rows.push_back(eval_row(0, 3, student.c.str(), "val", ev0.loss, ev0.accuracy));
    run.final_val_loss = ev0.loss;

    std::size_t global = 0;
    for (std::size_t epoch = 0; epoch < plan.distill_epochs; ++epoch) {
        std::vector<std::size_t> perm = root.fork(3000 + epoch).permutation(train.size());
        for (std::size_t start = 0; start < train.size(); start += plan.batch) {
            std::size_t count = std::min(plan.batch, train.size() - start);
            Batch b = make_batch(train, perm, start, count);
            ForwardOutput tout = forward_model(WT, b);
            ForwardOutput sout = forward_model(student_effective(student), b);
            LossBundle lb = combined_loss(sout, &tout, b, plan.distill, student.c, teacher.dims.L,
                                          &student.bank, false);
            opt.zero_grad();
            lb.total.backward();
            double lrs = cosine_decay(global, total);
            double gn = 0.0;
            for (const Tensor& p : opt.params())
                if (p.has_grad())
                    for (double v : p.grad()) gn += v * v;
            opt.step(lrs);
            run.rows.push_back(step_row(global, 3, student.c.str(), lb.task, lb.kd, lb.fd, lb.total.item(),
                                        1.0, std::sqrt(gn), lrs));
            ++global;
        }
        EvalResult ev = evaluate_weights(merge_student(student), val, plan.batch);
        run.rows.push_back(eval_row(global, 3, student.c.str(), "val", ev.loss, ev.accuracy));
        run.final_val_loss = ev.loss;
    }
    return run;
}

// ---------------------------------------------------------------------------
// initialization ablation: slice of a trained teacher vs fresh random weights

struct InitAblation {
    std::vector<double> sliced_val_loss;  // index 0 = before any update
    std::vector<double> random_val_loss;
    double sliced_auc = 0.0;
    double random_auc = 0.0;
};

namespace detail {

inline std::vector<double> full_param_curve(EffectiveWeights W, const Dataset& train, const Dataset& val,
                                            const TrainPlan& plan, std::size_t eval_every) {
    std::vector<Tensor> params = effective_tensors(W);
    for (Tensor& p : params) p.set_requires_grad(true);
    AdamW opt(params, plan.optim());
    std::size_t spe = steps_per_epoch(train.size(), plan.batch);
    std::size_t total = plan.distill_epochs * spe;
    Rng root(plan.seed);
    std::vector<double> curve;
    curve.push_back(evaluate_weights(W, val, plan.batch).loss);
    std::size_t global = 0;
    for (std::size_t epoch = 0; epoch < plan.distill_epochs; ++epoch) {
        std::vector<std::size_t> perm = root.fork(4000 + epoch).permutation(train.size());
        for (std::size_t start = 0; start < train.size(); start += plan.batch) {
            std::size_t count = std::min(plan.batch, train.size() - start);
            Batch b = make_batch(train, perm, start, count);
            Tensor loss = cross_entropy(forward_model(W, b).logits, b.targets);
            opt.zero_grad();
            loss.backward();
            opt.step(cosine_decay(global, total));
            ++global;
            if (global % eval_every == 0 || global == total)
                curve.push_back(evaluate_weights(W, val, plan.batch).loss);
        }
    }
    return curve;
}

inline double curve_auc(const std::vector<double>& c) {
    double s = 0.0;
    for (double v : c) s += v;
    return s / static_cast<double>(c.size());
}

}  // namespace detail

inline InitAblation sliced_vs_random_init(const Supernet& teacher, const ConfigSpace& space,
                                          const ArchConfig& c, const Dataset& train, const Dataset& val,
                                          const TrainPlan& plan, std::size_t eval_every = 10) {
    space.require(c);
    if (eval_every == 0) throw ContractError("init ablation: eval_every must be >= 1");
    EffectiveWeights sliced = materialize_subnet(teacher, c, kNumStages - 1);

    ModelDims dims;
    dims.d = c.d;
    dims.h = c.h;
    dims.f = c.f;
    dims.L = c.L;
    dims.vocab = teacher.dims.vocab;
    dims.max_seq = teacher.dims.max_seq;
    dims.n_out = teacher.dims.n_out;
    Supernet fresh = Supernet::create(dims, teacher.task, 1, plan.seed + 1);
    EffectiveWeights random = materialize_subnet(fresh, c, -1);

    InitAblation out;
    out.sliced_val_loss = detail::full_param_curve(std::move(sliced), train, val, plan, eval_every);
    out.random_val_loss = detail::full_param_curve(std::move(random), train, val, plan, eval_every);
    out.sliced_auc = detail::curve_auc(out.sliced_val_loss);
    out.random_auc = detail::curve_auc(out.random_val_loss);
    return out;
}

}  // namespace mlfs
