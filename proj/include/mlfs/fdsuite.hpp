#pragma once

#include <string>
#include <utility>
#include <vector>

#include "distill.hpp"
#include "gradcheck.hpp"
#include "sampler.hpp"
#include "synthetic.hpp"
#include "trainer.hpp"

namespace mlfs {

// Finite-difference verification of every trainable parameter class on a
// small model: the base weights through the pretraining loss, each stage's
// adapter pairs (with the head and projection bank) through the scaled
// multi-subnet loss, and the student pairs through the distillation loss.
// Teacher outputs are frozen once per scenario because the losses treat them
// as stop-gradient constants.
inline std::vector<std::pair<std::string, GradCheckReport>> run_fd_suite_at(
    const ModelDims& dims, const ConfigSpace& space, std::size_t d_low, std::uint64_t seed,
    std::size_t probes_per_tensor = 4) {
    Supernet net = Supernet::create(dims, TaskKind::classify, 2, seed);
    Rng brng = Rng(seed).fork(12);
    ProjectionBank bank = ProjectionBank::for_space(space, d_low, brng);

    DistillConfig dc;
    dc.alpha = 0.7;
    dc.temperature = 2.0;
    dc.beta.assign(dims.L, 0.1);
    dc.d_low = d_low;

    Dataset ds = make_classify(8, dims.vocab, dims.max_seq, dims.n_out, seed + 1);
    std::vector<std::size_t> order{0, 1, 2, 3};
    Batch b = make_batch(ds, order, 0, 4);
    ArchConfig maxc = space.maxnet();
    const double eps = 1e-5;

    std::vector<std::pair<std::string, GradCheckReport>> out;
    Rng prng = Rng(seed).fork(99);

    {
        net.set_base_trainable(true);
        auto loss_fn = [&] { return cross_entropy(supernet_forward(net, maxc, -1, b).logits, b.targets); };
        std::vector<Tensor> params;
        for (auto& [name, t] : net.base_named()) params.push_back(t);
        params.push_back(net.head_w);
        params.push_back(net.head_b);
        out.emplace_back("base(pretrain)", check_gradients(loss_fn, params, probes_per_tensor, eps, prng));
        net.set_base_trainable(false);
    }

    for (int stage = 0; stage < kNumStages; ++stage) {
        std::vector<ArchConfig> subnets{maxc};
        if (stage > 0) subnets.push_back(stage_min(space, stage));

        ForwardOutput t0 = supernet_forward(net, maxc, stage, b);
        ForwardOutput tconst;
        tconst.logits = t0.logits.detach();
        for (const Tensor& f : t0.features) tconst.features.push_back(f.detach());

        std::size_t d_low = bank.d_low();
        std::size_t entries = bank.subset().size();
        std::size_t n1 = param_count(net, maxc, stage, d_low, entries);
        double inv_k = 1.0 / static_cast<double>(subnets.size());
        auto loss_fn = [&, stage, n1, inv_k] {
            Tensor total = Tensor::scalar(0.0);
            for (std::size_t j = 0; j < subnets.size(); ++j) {
                bool is_max = (j == 0);
                ForwardOutput sub = supernet_forward(net, subnets[j], stage, b);
                LossBundle lb = combined_loss(sub, is_max ? nullptr : &tconst, b, dc, subnets[j], dims.L,
                                              is_max ? nullptr : &bank, is_max);
                double sc = gradient_scale(n1, param_count(net, subnets[j], stage, d_low, entries), 2.0);
                total = add(total, scale(lb.total, sc * inv_k));
            }
            return total;
        };
        std::vector<Tensor> params = net.stage_trainables(stage);
        for (Tensor& u : bank.tensors(true)) params.push_back(u);
        out.emplace_back("stage" + std::to_string(stage) + " adapters+bank+head",
                         check_gradients(loss_fn, params, probes_per_tensor, eps, prng));
    }

    {
        StudentModel student = make_student(net, space.minnet(), kNumStages - 1, 2, bank, true, seed + 2);
        EffectiveWeights WT = materialize_subnet(net, maxc, kNumStages - 1);
        ForwardOutput tout = forward_model(WT, b);  // already detached: WT holds fresh leaves
        auto loss_fn = [&] {
            ForwardOutput sout = forward_model(student_effective(student), b);
            return combined_loss(sout, &tout, b, dc, student.c, dims.L, &student.bank, false).total;
        };
        std::vector<Tensor> params = student_trainables(student);
        out.emplace_back("student(distill)", check_gradients(loss_fn, params, probes_per_tensor, eps, prng));
    }
    return out;
}

inline std::vector<std::pair<std::string, GradCheckReport>> run_fd_suite(std::uint64_t seed,
                                                                         std::size_t probes_per_tensor = 4) {
    ModelDims dims;
    dims.d = 8;
    dims.h = 2;
    dims.f = 16;
    dims.L = 2;
    dims.vocab = 14;
    dims.max_seq = 8;
    dims.n_out = 3;
    ConfigSpace space({{4, 1, 8}, {8, 2, 16}}, {1, 2});
    return run_fd_suite_at(dims, space, 2, seed, probes_per_tensor);
}

}  // namespace mlfs
