#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "arch.hpp"
#include "rng.hpp"

namespace mlfs {

class SamplingError : public std::runtime_error {
public:
    explicit SamplingError(const std::string& m) : std::runtime_error(m) {}
};

enum class SamplingPolicy { sandwich, uniform };

struct StagePlan {
    std::array<std::size_t, 3> epochs{2, 3, 3};
    std::size_t subnets_per_step = 3;  // K
    SamplingPolicy policy = SamplingPolicy::sandwich;
};

// smallest config available to a stage: stage 1 shrinks width only
inline ArchConfig stage_min(const ConfigSpace& space, int stage) {
    if (stage == 0) return space.maxnet();
    if (stage == 1) {
        const WidthTriple& w = space.widths().front();
        return {w.d, w.h, w.f, space.depths().back()};
    }
    if (stage == 2) return space.minnet();
    throw ConfigError("stage_min: stage " + std::to_string(stage) + " outside [0, 2]");
}

// per-step subnet draw; the maxnet always leads so it can teach the others
inline std::vector<ArchConfig> sample_subnets(const ConfigSpace& space, int stage, std::size_t K,
                                              SamplingPolicy policy, Rng& rng) {
    std::vector<ArchConfig> members = space.stage_members(stage);  // validates stage
    ArchConfig maxc = space.maxnet();
    if (members.size() == 1) return {maxc};
    if (K < 2) throw SamplingError("sample_subnets: need K >= 2, got " + std::to_string(K));

    std::vector<ArchConfig> out{maxc};
    if (policy == SamplingPolicy::sandwich) {
        ArchConfig minc = stage_min(space, stage);
        std::vector<ArchConfig> pool;
        for (const ArchConfig& c : members)
            if (c != maxc && c != minc) pool.push_back(c);
        std::size_t need = K - 2;
        if (need > pool.size())
            throw SamplingError("sample_subnets: K=" + std::to_string(K) + " wants " + std::to_string(need) +
                                " middle subnets but only " + std::to_string(pool.size()) + " exist");
        std::vector<std::size_t> order = rng.permutation(pool.size());
        for (std::size_t i = 0; i < need; ++i) out.push_back(pool[order[i]]);
        out.push_back(minc);
        return out;
    }

    // uniform: K-1 distinct non-maxnet draws
    std::vector<ArchConfig> pool;
    for (const ArchConfig& c : members)
        if (c != maxc) pool.push_back(c);
    std::size_t need = K - 1;
    if (need > pool.size())
        throw SamplingError("sample_subnets: K=" + std::to_string(K) + " wants " + std::to_string(need) +
                            " subnets but only " + std::to_string(pool.size()) + " exist");
    std::vector<std::size_t> order = rng.permutation(pool.size());
    for (std::size_t i = 0; i < need; ++i) out.push_back(pool[order[i]]);
    return out;
}

inline std::size_t steps_per_epoch(std::size_t n_train, std::size_t batch) {
    if (batch == 0) throw ContractError("steps_per_epoch: batch size 0");
    if (n_train == 0) throw ContractError("steps_per_epoch: empty training split");
    return (n_train + batch - 1) / batch;
}

inline std::size_t total_steps(const StagePlan& plan, std::size_t spe) {
    return (plan.epochs[0] + plan.epochs[1] + plan.epochs[2]) * spe;
}

// which stage a global step index belongs to
inline int stage_of(std::size_t step, const StagePlan& plan, std::size_t spe) {
    std::size_t b0 = plan.epochs[0] * spe;
    std::size_t b1 = b0 + plan.epochs[1] * spe;
    std::size_t b2 = b1 + plan.epochs[2] * spe;
    if (step < b0) return 0;
    if (step < b1) return 1;
    if (step < b2) return 2;
    throw IndexError("stage_of: step " + std::to_string(step) + " beyond the schedule of " +
                     std::to_string(b2) + " steps");
}

}  // namespace mlfs
