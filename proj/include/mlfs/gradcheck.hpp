#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace mlfs {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    std::string worst;

    bool ok(double tol = 1e-4) const { return checked > 0 && max_rel_err <= tol; }
};

// Central finite differences against reverse-mode gradients.
//
// loss_fn must rebuild the graph from the current parameter values on every
// call; params are leaves whose values are perturbed in place. The error is
// |fd - g| / max(|fd|, |g|, 1e-6); the absolute floor keeps legitimately zero
// gradients (e.g. sliced-away elements) from tripping the relative test on
// finite-difference noise.
inline GradCheckReport check_gradients(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                                       std::size_t samples_per_param, double eps, Rng& rng) {
    for (auto& p : params) p.zero_grad();
    Tensor loss = loss_fn();
    loss.backward(1.0);
    std::vector<std::vector<double>> analytic(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
        analytic[i] = params[i].has_grad() ? params[i].grad() : std::vector<double>(params[i].size(), 0.0);

    GradCheckReport rep;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = params[pi];
        std::size_t n = p.size();
        if (n == 0) continue;
        std::vector<std::size_t> picks;
        if (n <= samples_per_param) {
            picks.resize(n);
            for (std::size_t i = 0; i < n; ++i) picks[i] = i;
        } else {
            picks.reserve(samples_per_param);
            for (std::size_t i = 0; i < samples_per_param; ++i) picks.push_back(rng.below(n));
        }
        for (std::size_t idx : picks) {
            double orig = p.values_mut()[idx];
            p.values_mut()[idx] = orig + eps;
            double fp = loss_fn().item();
            p.values_mut()[idx] = orig - eps;
            double fm = loss_fn().item();
            p.values_mut()[idx] = orig;
            double fd = (fp - fm) / (2.0 * eps);
            double g = analytic[pi][idx];
            double denom = std::max({std::abs(fd), std::abs(g), 1e-6});
            double rel = std::abs(fd - g) / denom;
            ++rep.checked;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst = "param " + std::to_string(pi) + "[" + std::to_string(idx) +
                            "] analytic=" + std::to_string(g) + " fd=" + std::to_string(fd);
            }
        }
    }
    return rep;
}

}  // namespace mlfs
