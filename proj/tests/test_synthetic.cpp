#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>
#include <vector>

#include "mlfs/synthetic.hpp"

using namespace mlfs;

TEST_CASE("classification rows carry three markers and one decoy") {
    Dataset ds = make_classify(90, 16, 8, 3, 42);
    REQUIRE(ds.size() == 90);
    REQUIRE(ds.task == TaskKind::classify);
    REQUIRE(ds.n_out == 3);

    std::map<int, int> label_counts;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        int label = ds.targets[i][0];
        REQUIRE(label >= 0);
        REQUIRE(label < 3);
        ++label_counts[label];
        std::map<int, int> marker_counts;
        for (int tok : ds.inputs[i]) {
            REQUIRE(tok >= 0);
            REQUIRE(tok < 16);
            if (tok < 3) ++marker_counts[tok];
        }
        REQUIRE(marker_counts[label] == 3);
        int decoys = 0;
        for (auto& [tok, cnt] : marker_counts)
            if (tok != label) {
                decoys += cnt;
                REQUIRE(cnt == 1);
            }
        REQUIRE(decoys == 1);
    }
    for (auto& [label, cnt] : label_counts) REQUIRE(cnt == 30);  // round-robin stays balanced
}

TEST_CASE("language rows shift by one and follow a sparse successor table") {
    Dataset ds = make_char_lm(64, 10, 12, 9);
    REQUIRE(ds.size() == 64);
    REQUIRE(ds.task == TaskKind::char_lm);
    REQUIRE(ds.n_out == 10);
    std::map<int, std::set<int>> succ;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        REQUIRE(ds.inputs[i].size() == 12);
        REQUIRE(ds.targets[i].size() == 12);
        for (std::size_t t = 0; t + 1 < 12; ++t) REQUIRE(ds.inputs[i][t + 1] == ds.targets[i][t]);
        for (std::size_t t = 0; t < 12; ++t) {
            REQUIRE(ds.targets[i][t] >= 0);
            REQUIRE(ds.targets[i][t] < 10);
            succ[ds.inputs[i][t]].insert(ds.targets[i][t]);
        }
    }
    for (auto& [tok, nexts] : succ) REQUIRE(nexts.size() <= 3);
}

TEST_CASE("generation is seed-deterministic") {
    Dataset a = make_classify(40, 12, 6, 4, 5);
    Dataset b = make_classify(40, 12, 6, 4, 5);
    Dataset c = make_classify(40, 12, 6, 4, 6);
    REQUIRE(a.inputs == b.inputs);
    REQUIRE(a.targets == b.targets);
    REQUIRE(a.inputs != c.inputs);

    Dataset la = make_char_lm(20, 8, 5, 5);
    Dataset lb = make_char_lm(20, 8, 5, 5);
    REQUIRE(la.inputs == lb.inputs);
}

TEST_CASE("degenerate generation requests are rejected") {
    REQUIRE_THROWS_AS(make_classify(0, 16, 8, 3, 1), ConfigError);
    REQUIRE_THROWS_AS(make_classify(10, 16, 8, 1, 1), ConfigError);
    REQUIRE_THROWS_AS(make_classify(10, 3, 8, 3, 1), ConfigError);
    REQUIRE_THROWS_AS(make_classify(10, 16, 3, 3, 1), ConfigError);
    REQUIRE_THROWS_AS(make_char_lm(0, 8, 5, 1), ConfigError);
    REQUIRE_THROWS_AS(make_char_lm(10, 3, 5, 1), ConfigError);
    REQUIRE_THROWS_AS(make_char_lm(10, 8, 1, 1), ConfigError);
}

TEST_CASE("split keeps proportions, metadata and determinism") {
    Dataset ds = make_classify(96, 12, 6, 3, 7);
    SplitDataset sp = split_dataset(ds, 0.1, 8);
    REQUIRE(sp.val.size() == 9);
    REQUIRE(sp.train.size() == 87);
    REQUIRE(sp.train.vocab == 12);
    REQUIRE(sp.val.n_out == 3);
    REQUIRE(sp.val.seq_len == 6);

    SplitDataset sp2 = split_dataset(ds, 0.1, 8);
    REQUIRE(sp.train.inputs == sp2.train.inputs);
    REQUIRE(sp.val.inputs == sp2.val.inputs);

    Dataset two = make_classify(4, 12, 6, 2, 1);
    SplitDataset tiny = split_dataset(two, 0.01, 3);
    REQUIRE(tiny.val.size() == 1);  // validation never empties

    REQUIRE_THROWS_AS(split_dataset(ds, 0.0, 1), ConfigError);
    REQUIRE_THROWS_AS(split_dataset(ds, 1.0, 1), ConfigError);
}

TEST_CASE("batches pack rows in the order given") {
    Dataset ds = make_classify(10, 12, 6, 2, 3);
    std::vector<std::size_t> order{4, 2, 9};
    Batch b = make_batch(ds, order, 0, 3);
    REQUIRE(b.batch == 3);
    REQUIRE(b.seq == 6);
    REQUIRE(b.inputs.size() == 18);
    REQUIRE(b.targets.size() == 3);
    for (std::size_t t = 0; t < 6; ++t) {
        REQUIRE(b.inputs[t] == ds.inputs[4][t]);
        REQUIRE(b.inputs[6 + t] == ds.inputs[2][t]);
        REQUIRE(b.inputs[12 + t] == ds.inputs[9][t]);
    }
    REQUIRE(b.targets[1] == ds.targets[2][0]);

    Dataset lm = make_char_lm(6, 8, 4, 3);
    Batch lb = make_batch(lm, {1, 5}, 0, 2);
    REQUIRE(lb.targets.size() == 8);
    REQUIRE(lb.targets[4] == lm.targets[5][0]);

    REQUIRE_THROWS_AS(make_batch(ds, order, 0, 0), ContractError);
    REQUIRE_THROWS_AS(make_batch(ds, order, 2, 2), IndexError);
}
