#include <catch2/catch_amalgamated.hpp>

#include "mlfs/gradcheck.hpp"
#include "mlfs/tensor.hpp"

using namespace mlfs;

namespace {

constexpr double kEps = 1e-5;
constexpr double kTol = 1e-4;
constexpr std::size_t kSamples = 20;

Tensor project(const Tensor& out, const Tensor& r) { return sum(mul(out, r)); }

void expect_ok(const GradCheckReport& rep) {
    INFO(rep.worst << " max_rel_err=" << rep.max_rel_err);
    REQUIRE(rep.checked > 0);
    REQUIRE(rep.ok(kTol));
}

}  // namespace

TEST_CASE("fd: elementwise ops") {
    Rng rng(101);
    Tensor a = Tensor::uniform({3, 4}, -2, 2, rng).set_requires_grad(true);
    Tensor b = Tensor::uniform({4}, -2, 2, rng).set_requires_grad(true);
    Tensor c = Tensor::uniform({3, 4}, -2, 2, rng).set_requires_grad(true);
    Tensor r = Tensor::uniform({3, 4}, -1, 1, rng);

    expect_ok(check_gradients([&] { return project(add(a, b), r); }, {a, b}, kSamples, kEps, rng));
    expect_ok(check_gradients([&] { return project(sub(a, b), r); }, {a, b}, kSamples, kEps, rng));
    expect_ok(check_gradients([&] { return project(mul(a, b), r); }, {a, b}, kSamples, kEps, rng));
    expect_ok(check_gradients([&] { return project(mul(a, c), r); }, {a, c}, kSamples, kEps, rng));
    expect_ok(check_gradients([&] { return project(scale(a, -1.7), r); }, {a}, kSamples, kEps, rng));
    expect_ok(check_gradients([&] { return project(add_scalar(a, 0.3), r); }, {a}, kSamples, kEps, rng));
}

TEST_CASE("fd: matmul variants") {
    Rng rng(102);
    Tensor a = Tensor::uniform({3, 4}, -1, 1, rng).set_requires_grad(true);
    Tensor w = Tensor::uniform({4, 5}, -1, 1, rng).set_requires_grad(true);
    Tensor r = Tensor::uniform({3, 5}, -1, 1, rng);
    expect_ok(check_gradients([&] { return project(matmul(a, w), r); }, {a, w}, kSamples, kEps, rng));

    Tensor ab = Tensor::uniform({2, 3, 4}, -1, 1, rng).set_requires_grad(true);
    Tensor rb = Tensor::uniform({2, 3, 5}, -1, 1, rng);
    expect_ok(check_gradients([&] { return project(matmul(ab, w), rb); }, {ab, w}, kSamples, kEps, rng));

    Tensor b4 = Tensor::uniform({2, 2, 3, 4}, -1, 1, rng).set_requires_grad(true);
    Tensor c4 = Tensor::uniform({2, 2, 4, 5}, -1, 1, rng).set_requires_grad(true);
    Tensor r4 = Tensor::uniform({2, 2, 3, 5}, -1, 1, rng);
    expect_ok(check_gradients([&] { return project(matmul(b4, c4), r4); }, {b4, c4}, kSamples, kEps, rng));
}

TEST_CASE("fd: layout ops") {
    Rng rng(103);
    Tensor a = Tensor::uniform({2, 3, 4}, -1, 1, rng).set_requires_grad(true);
    Tensor rp = Tensor::uniform({4, 2, 3}, -1, 1, rng);
    expect_ok(check_gradients([&] { return project(permute(a, {2, 0, 1}), rp); }, {a}, kSamples, kEps, rng));

    Tensor rt = Tensor::uniform({2, 4, 3}, -1, 1, rng);
    expect_ok(check_gradients([&] { return project(transpose(a), rt); }, {a}, kSamples, kEps, rng));

    Tensor rr = Tensor::uniform({6, 4}, -1, 1, rng);
    expect_ok(check_gradients([&] { return project(reshape(a, {6, 4}), rr); }, {a}, kSamples, kEps, rng));

    Tensor rs = Tensor::uniform({2, 2, 3}, -1, 1, rng);
    expect_ok(check_gradients([&] { return project(slice_leading(a, {2, 2, 3}), rs); }, {a}, kSamples, kEps, rng));
}

TEST_CASE("fd: reductions") {
    Rng rng(104);
    Tensor a = Tensor::uniform({3, 4}, -1, 1, rng).set_requires_grad(true);
    expect_ok(check_gradients([&] { return sum(a); }, {a}, kSamples, kEps, rng));
    expect_ok(check_gradients([&] { return mean(a); }, {a}, kSamples, kEps, rng));
    Tensor r0 = Tensor::uniform({4}, -1, 1, rng);
    expect_ok(check_gradients([&] { return project(mean_axis(a, 0), r0); }, {a}, kSamples, kEps, rng));
    Tensor r1 = Tensor::uniform({3}, -1, 1, rng);
    expect_ok(check_gradients([&] { return project(mean_axis(a, 1), r1); }, {a}, kSamples, kEps, rng));
}

TEST_CASE("fd: nonlinearities") {
    Rng rng(105);
    Tensor a = Tensor::uniform({3, 5}, -2, 2, rng).set_requires_grad(true);
    Tensor r = Tensor::uniform({3, 5}, -1, 1, rng);
    expect_ok(check_gradients([&] { return project(softmax(a), r); }, {a}, kSamples, kEps, rng));
    expect_ok(check_gradients([&] { return project(gelu(a), r); }, {a}, kSamples, kEps, rng));

    Tensor x = Tensor::uniform({4, 6}, -2, 2, rng).set_requires_grad(true);
    Tensor g = Tensor::uniform({6}, 0.5, 1.5, rng).set_requires_grad(true);
    Tensor b = Tensor::uniform({6}, -0.5, 0.5, rng).set_requires_grad(true);
    Tensor rl = Tensor::uniform({4, 6}, -1, 1, rng);
    expect_ok(check_gradients([&] { return project(layer_norm(x, g, b), rl); }, {x, g, b}, kSamples, kEps, rng));
}

TEST_CASE("fd: embedding") {
    Rng rng(106);
    Tensor table = Tensor::uniform({7, 3}, -1, 1, rng).set_requires_grad(true);
    std::vector<int> ids{0, 3, 3, 6, 1, 0};
    Tensor r = Tensor::uniform({2, 3, 3}, -1, 1, rng);
    expect_ok(check_gradients([&] { return project(embedding_lookup(table, ids, 2, 3), r); }, {table},
                              kSamples, kEps, rng));
}

TEST_CASE("fd: losses") {
    Rng rng(107);
    Tensor z = Tensor::uniform({4, 5}, -2, 2, rng).set_requires_grad(true);
    std::vector<int> t{1, 0, 4, 2};
    expect_ok(check_gradients([&] { return cross_entropy(z, t); }, {z}, kSamples, kEps, rng));

    Tensor zt = Tensor::uniform({4, 5}, -2, 2, rng).set_requires_grad(true);
    expect_ok(check_gradients([&] { return cross_entropy(z, softmax(zt)); }, {z, zt}, kSamples, kEps, rng));

    Tensor zq = Tensor::uniform({4, 5}, -2, 2, rng).set_requires_grad(true);
    expect_ok(
        check_gradients([&] { return kl_divergence(softmax(z), softmax(zq)); }, {z, zq}, kSamples, kEps, rng));

    Tensor a = Tensor::uniform({3, 4}, -1, 1, rng).set_requires_grad(true);
    Tensor b = Tensor::uniform({3, 4}, -1, 1, rng).set_requires_grad(true);
    expect_ok(check_gradients([&] { return mse(a, b); }, {a, b}, kSamples, kEps, rng));
}

TEST_CASE("fd: composite chain through many ops") {
    Rng rng(108);
    Tensor x = Tensor::uniform({2, 3, 4}, -1, 1, rng).set_requires_grad(true);
    Tensor w1 = Tensor::uniform({4, 6}, -0.7, 0.7, rng).set_requires_grad(true);
    Tensor g = Tensor::uniform({6}, 0.8, 1.2, rng).set_requires_grad(true);
    Tensor b = Tensor::uniform({6}, -0.1, 0.1, rng).set_requires_grad(true);
    Tensor w2 = Tensor::uniform({6, 5}, -0.7, 0.7, rng).set_requires_grad(true);
    std::vector<int> t{0, 2, 4, 1, 3, 0};
    auto loss = [&] {
        Tensor h = matmul(x, w1);
        h = layer_norm(h, g, b);
        h = gelu(h);
        Tensor logits = matmul(h, w2);
        return cross_entropy(logits, t);
    };
    expect_ok(check_gradients(loss, {x, w1, g, b, w2}, kSamples, kEps, rng));
}
