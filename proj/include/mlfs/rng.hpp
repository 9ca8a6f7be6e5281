#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace mlfs {

// splitmix64; used to derive independent sub-streams from one root seed.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic RNG wrapper. std::uniform_int_distribution and friends are
// implementation-defined, so all sampling here is built directly on the
// mt19937_64 output stream; the same seed yields the same values everywhere.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), eng_(seed) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t next() { return eng_(); }

    // uniform integer in [0, n); n must be positive
    std::size_t below(std::size_t n) {
        return static_cast<std::size_t>(next() % static_cast<std::uint64_t>(n));
    }

    // uniform double in [0, 1) with 53 bits
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    template <class T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = below(i + 1);
            std::swap(v[i], v[j]);
        }
    }

    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = i;
        shuffle(p);
        return p;
    }

    // independent child stream, reproducible from (seed, salt) alone
    Rng fork(std::uint64_t salt) const { return Rng(mix_seed(seed_, salt)); }

private:
    std::uint64_t seed_;
    std::mt19937_64 eng_;
};

}  // namespace mlfs
