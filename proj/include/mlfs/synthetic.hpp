#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "arch.hpp"
#include "rng.hpp"
#include "task.hpp"

namespace mlfs {

struct Dataset {
    TaskKind task = TaskKind::classify;
    std::size_t vocab = 0, seq_len = 0, n_out = 0;
    std::vector<std::vector<int>> inputs;   // rows of seq_len token ids
    std::vector<std::vector<int>> targets;  // classify: one label; char_lm: seq_len next ids

    std::size_t size() const { return inputs.size(); }
};

// classification rows: class k plants three copies of marker token k and one
// decoy marker from another class among filler tokens; round-robin labels
// keep the classes balanced before the final shuffle
inline Dataset make_classify(std::size_t n, std::size_t vocab, std::size_t seq_len, std::size_t classes,
                             std::uint64_t seed) {
    if (n == 0) throw ConfigError("classify data: empty dataset");
    if (classes < 2) throw ConfigError("classify data: need at least 2 classes");
    if (vocab <= classes) throw ConfigError("classify data: vocab " + std::to_string(vocab) +
                                            " leaves no filler tokens beyond " + std::to_string(classes) +
                                            " markers");
    if (seq_len < 4) throw ConfigError("classify data: need seq_len >= 4 for 3 markers and a decoy");
    Dataset ds;
    ds.task = TaskKind::classify;
    ds.vocab = vocab;
    ds.seq_len = seq_len;
    ds.n_out = classes;
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t label = i % classes;
        std::vector<int> row(seq_len);
        for (std::size_t t = 0; t < seq_len; ++t)
            row[t] = static_cast<int>(classes + rng.below(vocab - classes));
        std::vector<std::size_t> pos = rng.permutation(seq_len);
        row[pos[0]] = static_cast<int>(label);
        row[pos[1]] = static_cast<int>(label);
        row[pos[2]] = static_cast<int>(label);
        std::size_t decoy = (label + 1 + rng.below(classes - 1)) % classes;
        row[pos[3]] = static_cast<int>(decoy);
        ds.inputs.push_back(std::move(row));
        ds.targets.push_back({static_cast<int>(label)});
    }
    std::vector<std::size_t> order = rng.permutation(n);
    std::vector<std::vector<int>> si(n), st(n);
    for (std::size_t i = 0; i < n; ++i) {
        si[i] = std::move(ds.inputs[order[i]]);
        st[i] = std::move(ds.targets[order[i]]);
    }
    ds.inputs = std::move(si);
    ds.targets = std::move(st);
    return ds;
}

// next-token rows from a sparse random walk: every token allows exactly
// three successors, so the achievable loss floor is ln 3
inline Dataset make_char_lm(std::size_t n, std::size_t vocab, std::size_t seq_len, std::uint64_t seed) {
    if (n == 0) throw ConfigError("char-lm data: empty dataset");
    if (vocab < 4) throw ConfigError("char-lm data: need vocab >= 4");
    if (seq_len < 2) throw ConfigError("char-lm data: need seq_len >= 2");
    Dataset ds;
    ds.task = TaskKind::char_lm;
    ds.vocab = vocab;
    ds.seq_len = seq_len;
    ds.n_out = vocab;
    Rng rng(seed);
    std::vector<std::vector<int>> succ(vocab);
    for (std::size_t t = 0; t < vocab; ++t) {
        std::vector<std::size_t> perm = rng.permutation(vocab);
        succ[t] = {static_cast<int>(perm[0]), static_cast<int>(perm[1]), static_cast<int>(perm[2])};
    }
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<int> chain(seq_len + 1);
        chain[0] = static_cast<int>(rng.below(vocab));
        for (std::size_t t = 1; t <= seq_len; ++t) chain[t] = succ[chain[t - 1]][rng.below(3)];
        ds.inputs.emplace_back(chain.begin(), chain.end() - 1);
        ds.targets.emplace_back(chain.begin() + 1, chain.end());
    }
    return ds;
}

struct SplitDataset {
    Dataset train, val;
};

// seeded shuffle split; validation keeps at least one row
inline SplitDataset split_dataset(const Dataset& ds, double val_frac, std::uint64_t seed) {
    if (ds.size() < 2) throw ContractError("split: need at least 2 rows");
    if (!(val_frac > 0.0 && val_frac < 1.0))
        throw ConfigError("split: validation fraction " + std::to_string(val_frac) + " outside (0, 1)");
    Rng rng(seed);
    std::vector<std::size_t> perm = rng.permutation(ds.size());
    std::size_t n_val = static_cast<std::size_t>(static_cast<double>(ds.size()) * val_frac);
    if (n_val == 0) n_val = 1;
    if (n_val >= ds.size()) n_val = ds.size() - 1;
    SplitDataset out;
    for (Dataset* part : {&out.train, &out.val}) {
        part->task = ds.task;
        part->vocab = ds.vocab;
        part->seq_len = ds.seq_len;
        part->n_out = ds.n_out;
    }
    for (std::size_t i = 0; i < ds.size(); ++i) {
        Dataset& dst = (i < ds.size() - n_val) ? out.train : out.val;
        dst.inputs.push_back(ds.inputs[perm[i]]);
        dst.targets.push_back(ds.targets[perm[i]]);
    }
    return out;
}

// rows order[start, start+count) packed into one contiguous batch
inline Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& order, std::size_t start,
                        std::size_t count) {
    if (count == 0) throw ContractError("batch: empty slice");
    if (start + count > order.size())
        throw IndexError("batch: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") exceed " + std::to_string(order.size()));
    Batch b;
    b.batch = count;
    b.seq = ds.seq_len;
    for (std::size_t r = start; r < start + count; ++r) {
        const std::vector<int>& in = ds.inputs.at(order[r]);
        const std::vector<int>& tg = ds.targets.at(order[r]);
        b.inputs.insert(b.inputs.end(), in.begin(), in.end());
        b.targets.insert(b.targets.end(), tg.begin(), tg.end());
    }
    return b;
}

}  // namespace mlfs
