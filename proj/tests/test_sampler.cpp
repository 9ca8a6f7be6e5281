#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>
#include <vector>

#include "mlfs/sampler.hpp"

using namespace mlfs;

namespace {

ConfigSpace grid3x3() {
    return ConfigSpace({{8, 1, 32}, {16, 2, 64}, {32, 4, 128}}, {3, 4, 6});
}

std::string key(const ArchConfig& c) { return c.str(); }

}  // namespace

TEST_CASE("stage_min restricts the shrink axes per stage") {
    ConfigSpace space = grid3x3();
    REQUIRE((stage_min(space, 0) == ArchConfig{32, 4, 128, 6}));
    REQUIRE((stage_min(space, 1) == ArchConfig{8, 1, 32, 6}));
    REQUIRE((stage_min(space, 2) == ArchConfig{8, 1, 32, 3}));
    REQUIRE_THROWS_AS(stage_min(space, 3), ConfigError);
    REQUIRE_THROWS_AS(stage_min(space, -1), ConfigError);
}

TEST_CASE("stage 0 always yields just the maxnet") {
    ConfigSpace space = grid3x3();
    Rng rng(7);
    for (SamplingPolicy p : {SamplingPolicy::sandwich, SamplingPolicy::uniform}) {
        std::vector<ArchConfig> s = sample_subnets(space, 0, 5, p, rng);
        REQUIRE(s.size() == 1);
        REQUIRE(s[0] == space.maxnet());
    }
}

TEST_CASE("sandwich draw is maxnet, distinct middles, stage minimum") {
    ConfigSpace space = grid3x3();
    Rng rng(11);

    SECTION("stage 1 keeps full depth") {
        std::vector<ArchConfig> s = sample_subnets(space, 1, 3, SamplingPolicy::sandwich, rng);
        REQUIRE(s.size() == 3);
        REQUIRE((s.front() == ArchConfig{32, 4, 128, 6}));
        REQUIRE((s.back() == ArchConfig{8, 1, 32, 6}));
        REQUIRE((s[1] == ArchConfig{16, 2, 64, 6}));  // only possible middle
        for (const ArchConfig& c : s) REQUIRE(c.L == 6);
    }

    SECTION("stage 2 ends at the true minnet") {
        std::vector<ArchConfig> s = sample_subnets(space, 2, 3, SamplingPolicy::sandwich, rng);
        REQUIRE(s.size() == 3);
        REQUIRE(s.front() == space.maxnet());
        REQUIRE(s.back() == space.minnet());
        REQUIRE(space.contains(s[1]));
        REQUIRE(s[1] != s.front());
        REQUIRE(s[1] != s.back());
    }

    SECTION("K=2 is exactly the endpoints") {
        std::vector<ArchConfig> s = sample_subnets(space, 2, 2, SamplingPolicy::sandwich, rng);
        REQUIRE(s.size() == 2);
        REQUIRE(s[0] == space.maxnet());
        REQUIRE(s[1] == space.minnet());
    }

    SECTION("middles never repeat inside one draw") {
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<ArchConfig> s = sample_subnets(space, 2, 6, SamplingPolicy::sandwich, rng);
            std::set<std::string> seen;
            for (const ArchConfig& c : s) seen.insert(key(c));
            REQUIRE(seen.size() == s.size());
        }
    }
}

TEST_CASE("uniform draw leads with the maxnet and never repeats") {
    ConfigSpace space = grid3x3();
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<ArchConfig> s = sample_subnets(space, 2, 4, SamplingPolicy::uniform, rng);
        REQUIRE(s.size() == 4);
        REQUIRE(s.front() == space.maxnet());
        std::set<std::string> seen;
        for (const ArchConfig& c : s) {
            REQUIRE(space.contains(c));
            seen.insert(key(c));
        }
        REQUIRE(seen.size() == 4);
        for (std::size_t i = 1; i < s.size(); ++i) REQUIRE(s[i] != space.maxnet());
    }
}

TEST_CASE("oversized K is rejected, maximal K is not") {
    ConfigSpace space = grid3x3();  // 9 stage-2 members
    Rng rng(17);
    REQUIRE(sample_subnets(space, 2, 9, SamplingPolicy::sandwich, rng).size() == 9);
    REQUIRE_THROWS_AS(sample_subnets(space, 2, 10, SamplingPolicy::sandwich, rng), SamplingError);
    REQUIRE(sample_subnets(space, 2, 9, SamplingPolicy::uniform, rng).size() == 9);
    REQUIRE_THROWS_AS(sample_subnets(space, 2, 10, SamplingPolicy::uniform, rng), SamplingError);
    REQUIRE_THROWS_AS(sample_subnets(space, 2, 1, SamplingPolicy::sandwich, rng), SamplingError);
    REQUIRE_THROWS_AS(sample_subnets(space, 1, 4, SamplingPolicy::sandwich, rng), SamplingError);
}

TEST_CASE("same seed replays the identical subnet sequence") {
    ConfigSpace space = grid3x3();
    Rng a(99), b(99);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<ArchConfig> sa = sample_subnets(space, 2, 4, SamplingPolicy::sandwich, a);
        std::vector<ArchConfig> sb = sample_subnets(space, 2, 4, SamplingPolicy::sandwich, b);
        REQUIRE(sa == sb);
    }
}

TEST_CASE("repeated draws eventually visit the whole grid") {
    ConfigSpace space = grid3x3();
    Rng rng(5);
    std::set<std::string> seen;
    for (int trial = 0; trial < 300; ++trial)
        for (const ArchConfig& c : sample_subnets(space, 2, 3, SamplingPolicy::sandwich, rng)) seen.insert(key(c));
    REQUIRE(seen.size() == 9);
}

TEST_CASE("step bookkeeping maps onto stage boundaries") {
    StagePlan plan;
    plan.epochs = {2, 3, 3};

    REQUIRE(steps_per_epoch(10, 3) == 4);  // partial final batch counts
    REQUIRE(steps_per_epoch(9, 3) == 3);
    REQUIRE(steps_per_epoch(1, 32) == 1);
    REQUIRE_THROWS_AS(steps_per_epoch(0, 4), ContractError);
    REQUIRE_THROWS_AS(steps_per_epoch(4, 0), ContractError);

    std::size_t spe = 5;
    REQUIRE(total_steps(plan, spe) == 40);
    REQUIRE(stage_of(0, plan, spe) == 0);
    REQUIRE(stage_of(9, plan, spe) == 0);
    REQUIRE(stage_of(10, plan, spe) == 1);
    REQUIRE(stage_of(24, plan, spe) == 1);
    REQUIRE(stage_of(25, plan, spe) == 2);
    REQUIRE(stage_of(39, plan, spe) == 2);
    REQUIRE_THROWS_AS(stage_of(40, plan, spe), IndexError);
}
