#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "arch.hpp"

namespace mlfs {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// cosine schedule factor in [0, 1]; step counted from 0, total > 0
inline double cosine_decay(std::size_t step, std::size_t total) {
    if (total == 0) return 1.0;
    if (step >= total) return 0.0;
    return 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

class AdamW {
public:
    AdamW(std::vector<Tensor> params, AdamWConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
        if (!(cfg_.lr > 0.0)) throw ConfigError("adamw: lr must be > 0");
        if (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0) throw ConfigError("adamw: beta1 must be in [0, 1)");
        if (cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0) throw ConfigError("adamw: beta2 must be in [0, 1)");
        if (!(cfg_.eps > 0.0)) throw ConfigError("adamw: eps must be > 0");
        if (cfg_.weight_decay < 0.0) throw ConfigError("adamw: weight_decay must be >= 0");
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].size(), 0.0);
            v_[i].assign(params_[i].size(), 0.0);
        }
    }

    const std::vector<Tensor>& params() const { return params_; }
    std::size_t step_count() const { return t_; }

    // update from explicit gradient buffers, one per parameter
    void step_with(const std::vector<std::vector<double>>& grads, double lr_scale = 1.0) {
        if (grads.size() != params_.size())
            throw ContractError("adamw: got " + std::to_string(grads.size()) + " gradient buffers for " +
                                std::to_string(params_.size()) + " parameters");
        for (std::size_t i = 0; i < params_.size(); ++i)
            if (grads[i].size() != params_[i].size())
                throw ContractError("adamw: gradient " + std::to_string(i) + " has " +
                                    std::to_string(grads[i].size()) + " entries, parameter has " +
                                    std::to_string(params_[i].size()));
        ++t_;
        double lr = cfg_.lr * lr_scale;
        double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            std::vector<double>& p = params_[i].values_mut();
            std::vector<double>& m = m_[i];
            std::vector<double>& v = v_[i];
            const std::vector<double>& g = grads[i];
            for (std::size_t j = 0; j < p.size(); ++j) {
                m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
                double mhat = m[j] / bc1;
                double vhat = v[j] / bc2;
                p[j] -= lr * cfg_.weight_decay * p[j];  // decoupled decay
                p[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    // update from the gradients accumulated on the tensors; untouched params see zero
    void step(double lr_scale = 1.0) {
        std::vector<std::vector<double>> grads(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (params_[i].has_grad())
                grads[i] = params_[i].grad();
            else
                grads[i].assign(params_[i].size(), 0.0);
        }
        step_with(grads, lr_scale);
    }

    void zero_grad() {
        for (Tensor& p : params_) p.zero_grad();
    }

private:
    std::vector<Tensor> params_;
    AdamWConfig cfg_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace mlfs
