#pragma once

#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <utility>
#include <vector>

#include "arch.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace mlfs {

struct DistillConfig {
    double alpha = 0.9;
    double temperature = 1.0;
    std::vector<double> beta;  // weight per maxnet layer, index m-1
    std::size_t d_low = 4;
};

inline void validate_distill(const DistillConfig& cfg, std::size_t L_max) {
    if (cfg.alpha < 0.0 || cfg.alpha > 1.0)
        throw ConfigError("distill: alpha " + std::to_string(cfg.alpha) + " outside [0, 1]");
    if (!(cfg.temperature > 0.0))
        throw ConfigError("distill: temperature must be positive, got " + std::to_string(cfg.temperature));
    if (cfg.d_low < 1) throw ConfigError("distill: d_low must be >= 1");
    if (cfg.beta.size() != L_max)
        throw ConfigError("distill: " + std::to_string(cfg.beta.size()) + " beta weights for " +
                          std::to_string(L_max) + " layers");
    for (double b : cfg.beta)
        if (b < 0.0) throw ConfigError("distill: negative beta weight");
}

// shared low-dimensional feature projections, one per distilled maxnet layer.
// The distilled subset is fixed from the smallest depth's layer map, so every
// subnet compares against the same maxnet layers.
class ProjectionBank {
public:
    ProjectionBank() = default;

    ProjectionBank(std::size_t d_low, std::size_t d_max, std::vector<std::size_t> subset, Rng& rng)
        : d_low_(d_low), d_max_(d_max), subset_(std::move(subset)) {
        if (d_low_ < 1 || d_low_ > d_max_)
            throw ConfigError("projection bank: d_low " + std::to_string(d_low_) + " outside [1, " +
                              std::to_string(d_max_) + "]");
        if (subset_.empty()) throw ConfigError("projection bank: empty layer subset");
        for (std::size_t i = 0; i < subset_.size(); ++i) {
            if (subset_[i] < 1) throw ConfigError("projection bank: layer indices are 1-based");
            if (i > 0 && subset_[i] <= subset_[i - 1])
                throw ConfigError("projection bank: layer subset must be strictly increasing");
        }
        double bound = 1.0 / std::sqrt(static_cast<double>(d_max_));
        for (std::size_t i = 0; i < subset_.size(); ++i)
            u_.push_back(Tensor::uniform({d_low_, d_max_}, -bound, bound, rng));
    }

    static ProjectionBank for_space(const ConfigSpace& space, std::size_t d_low, Rng& rng) {
        return ProjectionBank(d_low, space.maxnet().d, retained_layers(space.minnet().L, space.maxnet().L),
                              rng);
    }

    std::size_t d_low() const { return d_low_; }
    std::size_t d_max() const { return d_max_; }
    const std::vector<std::size_t>& subset() const { return subset_; }

    bool has_layer(std::size_t m) const {
        for (std::size_t s : subset_)
            if (s == m) return true;
        return false;
    }

    std::size_t index_of(std::size_t m) const {
        for (std::size_t i = 0; i < subset_.size(); ++i)
            if (subset_[i] == m) return i;
        throw IndexError("projection bank: layer " + std::to_string(m) + " is not distilled");
    }

    Tensor& u(std::size_t idx) { return u_.at(idx); }
    const Tensor& u(std::size_t idx) const { return u_.at(idx); }

    // leading d_c columns of the projection for maxnet layer m, on the graph
    Tensor slice(std::size_t m, std::size_t d_c) const {
        return slice_leading(u_[index_of(m)], {d_low_, d_c});
    }

    std::vector<Tensor> tensors(bool trainable) {
        std::vector<Tensor> out;
        for (Tensor& t : u_) {
            t.set_requires_grad(trainable);
            out.push_back(t);
        }
        return out;
    }

    std::vector<std::pair<std::string, Tensor>> named() const {
        std::vector<std::pair<std::string, Tensor>> out;
        for (std::size_t i = 0; i < subset_.size(); ++i)
            out.emplace_back("bank.U" + std::to_string(subset_[i]), u_[i]);
        return out;
    }

    // value copy with fresh leaves, independent of this bank's graph
    ProjectionBank clone_detached() const {
        ProjectionBank b;
        b.d_low_ = d_low_;
        b.d_max_ = d_max_;
        b.subset_ = subset_;
        for (const Tensor& t : u_) b.u_.push_back(t.detach());
        return b;
    }

private:
    std::size_t d_low_ = 0, d_max_ = 0;
    std::vector<std::size_t> subset_;
    std::vector<Tensor> u_;
};

inline Tensor slice_projection(const ProjectionBank& bank, const ArchConfig& c, std::size_t m) {
    return bank.slice(m, c.d);
}

// ---------------------------------------------------------------------------
// losses

// KL(softmax(zs/t) || softmax(zt/t)); the teacher side is treated as constant
inline Tensor kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, double temperature = 1.0) {
    if (!(temperature > 0.0))
        throw ContractError("kd_loss: temperature must be positive, got " + std::to_string(temperature));
    if (student_logits.shape() != teacher_logits.shape())
        throw ShapeError("kd_loss: student " + shape_str(student_logits.shape()) + " vs teacher " +
                         shape_str(teacher_logits.shape()));
    double inv_t = 1.0 / temperature;
    Tensor p = softmax(scale(student_logits, inv_t));
    Tensor q = softmax(scale(teacher_logits.detach(), inv_t));
    return kl_divergence(p, q);
}

// student layer matched to maxnet layer m: the kept layer whose mapped
// position is nearest to m, ties resolved toward the deeper layer
inline std::size_t nearest_student_layer(const ArchConfig& c, std::size_t L_max, std::size_t m) {
    auto g = retained_layers(c.L, L_max);
    std::size_t best = 1;
    long best_dist = -1;
    for (std::size_t l = 1; l <= c.L; ++l) {
        long dist = std::labs(static_cast<long>(g[l - 1]) - static_cast<long>(m));
        if (best_dist < 0 || dist <= best_dist) {
            best = l;
            best_dist = dist;
        }
    }
    return best;
}

// sum over distilled maxnet layers m of beta[m-1] * mse of the projected
// student feature against the projected (constant) maxnet feature
inline Tensor fd_loss(const std::vector<Tensor>& student_features, const std::vector<Tensor>& maxnet_features,
                      const ProjectionBank& bank, const ArchConfig& c, std::size_t L_max,
                      const std::vector<double>& beta) {
    if (student_features.size() != c.L)
        throw ShapeError("fd_loss: " + std::to_string(student_features.size()) + " student features for depth " +
                         std::to_string(c.L));
    if (maxnet_features.size() != L_max)
        throw ShapeError("fd_loss: " + std::to_string(maxnet_features.size()) + " maxnet features for depth " +
                         std::to_string(L_max));
    if (beta.size() != L_max)
        throw ConfigError("fd_loss: " + std::to_string(beta.size()) + " beta weights for " +
                          std::to_string(L_max) + " layers");
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t m : bank.subset()) {
        std::size_t l = nearest_student_layer(c, L_max, m);
        Tensor u_s = bank.slice(m, c.d);          // (d_low, d_c)
        Tensor u_t = bank.slice(m, bank.d_max());  // (d_low, d_max)
        Tensor proj_s = matmul(student_features[l - 1], transpose(u_s));
        Tensor proj_t = matmul(maxnet_features[m - 1].detach(), transpose(u_t));
        total = add(total, scale(mse(proj_s, proj_t), beta[m - 1]));
    }
    return total;
}

// ---------------------------------------------------------------------------
// per-subnet training objective

struct LossBundle {
    Tensor total;
    double task = 0.0, kd = 0.0, fd = 0.0;
    double alpha_used = 0.0;
};

// (1 - alpha) * task + alpha * (kd + fd); the maxnet trains on the task loss
// alone (alpha forced to zero)
inline LossBundle combined_loss(const ForwardOutput& subnet_out, const ForwardOutput* maxnet_out,
                                const Batch& batch, const DistillConfig& cfg, const ArchConfig& c,
                                std::size_t L_max, const ProjectionBank* bank, bool is_maxnet) {
    validate_distill(cfg, L_max);
    LossBundle lb;
    Tensor task = cross_entropy(subnet_out.logits, batch.targets);
    lb.task = task.item();
    if (is_maxnet || cfg.alpha == 0.0) {
        lb.total = task;
        return lb;
    }
    if (maxnet_out == nullptr || bank == nullptr)
        throw ContractError("combined_loss: subnet distillation needs maxnet outputs and a projection bank");
    Tensor kd = kd_loss(subnet_out.logits, maxnet_out->logits, cfg.temperature);
    Tensor fd = fd_loss(subnet_out.features, maxnet_out->features, *bank, c, L_max, cfg.beta);
    lb.kd = kd.item();
    lb.fd = fd.item();
    lb.alpha_used = cfg.alpha;
    lb.total = add(scale(task, 1.0 - cfg.alpha), scale(add(kd, fd), cfg.alpha));
    return lb;
}

}  // namespace mlfs
