#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace mlfs {

class RankError : public std::invalid_argument {
public:
    explicit RankError(const std::string& m) : std::invalid_argument(m) {}
};

// one stage's additive low-rank factor pair for a weight used as x @ W,
// W of shape (rows=fan_in, cols=fan_out). The product a @ b is zero at init:
// a is random uniform(+-1/sqrt(fan_in)), b starts at zero.
struct LoraPair {
    Tensor a;  // (rows, rank)
    Tensor b;  // (rank, cols)
    std::size_t rank = 0;
    int stage = 0;

    std::size_t rows() const { return a.shape()[0]; }
    std::size_t cols() const { return b.shape()[1]; }
};

inline LoraPair init_pair(std::size_t rows, std::size_t cols, std::size_t rank, int stage, Rng& rng) {
    if (rank < 1 || rank > std::min(rows, cols))
        throw RankError("lora rank " + std::to_string(rank) + " outside [1, min(" + std::to_string(rows) +
                        ", " + std::to_string(cols) + ")]");
    double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    LoraPair p;
    p.a = Tensor::uniform({rows, rank}, -bound, bound, rng);
    p.b = Tensor::zeros({rank, cols});
    p.rank = rank;
    p.stage = stage;
    return p;
}

// per-weight stack of stage pairs, index = stage
struct AdapterStack {
    std::vector<LoraPair> pairs;
};

inline AdapterStack make_stack(std::size_t rows, std::size_t cols, std::size_t rank, int n_stages, Rng& rng) {
    AdapterStack st;
    for (int s = 0; s < n_stages; ++s) st.pairs.push_back(init_pair(rows, cols, rank, s, rng));
    return st;
}

inline Tensor lora_delta(const LoraPair& p) { return matmul(p.a, p.b); }

// delta restricted to the leading (rows_c, cols_c) block; equals slicing the
// full product because a's rank axis is untouched
inline Tensor slice_delta(const LoraPair& p, std::size_t rows_c, std::size_t cols_c) {
    return matmul(slice_leading(p.a, {rows_c, p.rank}), slice_leading(p.b, {p.rank, cols_c}));
}

// w_pre + sum of stage deltas up to and including `stage`
inline Tensor compose(const Tensor& w_pre, const AdapterStack& st, int stage) {
    if (stage < 0 || static_cast<std::size_t>(stage) >= st.pairs.size())
        throw ContractError("compose: stage " + std::to_string(stage) + " outside the stack of " +
                            std::to_string(st.pairs.size()));
    Tensor w = w_pre;
    for (int s = 0; s <= stage; ++s) w = add(w, lora_delta(st.pairs[s]));
    return w;
}

// leading-block composition; elementwise identical to slicing compose()
inline Tensor compose_sliced(const Tensor& w_pre, const AdapterStack& st, int stage, std::size_t rows_c,
                             std::size_t cols_c) {
    if (stage < 0 || static_cast<std::size_t>(stage) >= st.pairs.size())
        throw ContractError("compose_sliced: stage " + std::to_string(stage) + " outside the stack of " +
                            std::to_string(st.pairs.size()));
    Tensor w = slice_leading(w_pre, {rows_c, cols_c});
    for (int s = 0; s <= stage; ++s) w = add(w, slice_delta(st.pairs[s], rows_c, cols_c));
    return w;
}

// trainable element count of one sliced pair
inline std::size_t pair_param_count(std::size_t rows_c, std::size_t cols_c, std::size_t rank) {
    return rows_c * rank + rank * cols_c;
}

}  // namespace mlfs
