#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <thread>

#include "mlfs/tensor.hpp"

using namespace mlfs;
using Catch::Approx;

TEST_CASE("construction and accessors") {
    Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    REQUIRE(t.shape() == Shape{2, 3});
    REQUIRE(t.rank() == 2);
    REQUIRE(t.size() == 6);
    REQUIRE(t.at({1, 2}) == 6.0);
    REQUIRE_THROWS_AS(t.at({2, 0}), IndexError);
    REQUIRE_THROWS_AS(t.at({0}), IndexError);
    REQUIRE_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
    REQUIRE(Tensor::scalar(3.5).item() == 3.5);
    REQUIRE_THROWS_AS(t.item(), ContractError);
    REQUIRE(!t.requires_grad());
    static_assert(std::is_same_v<std::decay_t<decltype(t.values()[0])>, double>,
                  "values are stored in binary64");
}

TEST_CASE("uniform init is reproducible from the seed") {
    Rng r1(42), r2(42), r3(43);
    Tensor a = Tensor::uniform({4, 4}, -1.0, 1.0, r1);
    Tensor b = Tensor::uniform({4, 4}, -1.0, 1.0, r2);
    Tensor c = Tensor::uniform({4, 4}, -1.0, 1.0, r3);
    REQUIRE(a.values() == b.values());
    REQUIRE(a.values() != c.values());
    for (double v : a.values()) {
        REQUIRE(v >= -1.0);
        REQUIRE(v < 1.0);
    }
}

TEST_CASE("matmul forward values") {
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
    Tensor c = matmul(a, b);
    REQUIRE(c.values() == std::vector<double>{19, 22, 43, 50});

    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    REQUIRE(matmul(eye, b).values() == b.values());
    REQUIRE(matmul(b, eye).values() == b.values());

    Tensor r = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor s = Tensor::from_data({3, 1}, {1, 1, 1});
    REQUIRE(matmul(r, s).values() == std::vector<double>{6, 15});

    REQUIRE_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), ShapeError);
    REQUIRE_THROWS_AS(matmul(Tensor::zeros({3}), Tensor::zeros({3, 2})), ShapeError);
}

TEST_CASE("batched matmul matches per-slab 2d matmul") {
    Rng rng(7);
    Tensor a = Tensor::uniform({2, 3, 4}, -1, 1, rng);
    Tensor w = Tensor::uniform({4, 5}, -1, 1, rng);
    Tensor c = matmul(a, w);
    REQUIRE(c.shape() == Shape{2, 3, 5});
    for (std::size_t t = 0; t < 2; ++t) {
        std::vector<double> slab(a.values().begin() + t * 12, a.values().begin() + (t + 1) * 12);
        Tensor c2 = matmul(Tensor::from_data({3, 4}, slab), w);
        for (std::size_t i = 0; i < 15; ++i) REQUIRE(c.values()[t * 15 + i] == c2.values()[i]);
    }

    Tensor b = Tensor::uniform({2, 4, 5}, -1, 1, rng);
    Tensor d = matmul(a, b);
    REQUIRE(d.shape() == Shape{2, 3, 5});
    for (std::size_t t = 0; t < 2; ++t) {
        std::vector<double> sa(a.values().begin() + t * 12, a.values().begin() + (t + 1) * 12);
        std::vector<double> sb(b.values().begin() + t * 20, b.values().begin() + (t + 1) * 20);
        Tensor d2 = matmul(Tensor::from_data({3, 4}, sa), Tensor::from_data({4, 5}, sb));
        for (std::size_t i = 0; i < 15; ++i) REQUIRE(d.values()[t * 15 + i] == d2.values()[i]);
    }

    REQUIRE_THROWS_AS(matmul(Tensor::zeros({2, 3, 4}), Tensor::zeros({3, 4, 5})), ShapeError);
}

TEST_CASE("matmul backward") {
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4}).set_requires_grad(true);
    Tensor b = Tensor::from_data({2, 2}, {5, 6, 7, 8}).set_requires_grad(true);
    Tensor loss = sum(matmul(a, b));
    loss.backward();
    // dA = ones @ B^T, dB = A^T @ ones
    REQUIRE(a.grad() == std::vector<double>{11, 15, 11, 15});
    REQUIRE(b.grad() == std::vector<double>{4, 4, 6, 6});
}

TEST_CASE("add sub mul with trailing broadcast") {
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({2}, {10, 20});
    REQUIRE(add(a, b).values() == std::vector<double>{11, 22, 13, 24});
    REQUIRE(sub(a, b).values() == std::vector<double>{-9, -18, -7, -16});
    REQUIRE(mul(a, b).values() == std::vector<double>{10, 40, 30, 80});
    REQUIRE_THROWS_AS(add(a, Tensor::zeros({3})), ShapeError);
    REQUIRE_THROWS_AS(add(a, Tensor::zeros({2, 2, 2})), ShapeError);

    Tensor a2 = Tensor::from_data({2, 2}, {1, 2, 3, 4}).set_requires_grad(true);
    Tensor b2 = Tensor::from_data({2}, {10, 20}).set_requires_grad(true);
    sum(mul(a2, b2)).backward();
    REQUIRE(a2.grad() == std::vector<double>{10, 20, 10, 20});
    REQUIRE(b2.grad() == std::vector<double>{4, 6});

    Tensor a3 = Tensor::from_data({2}, {1, 2}).set_requires_grad(true);
    Tensor b3 = Tensor::from_data({2}, {5, 3}).set_requires_grad(true);
    sum(sub(a3, b3)).backward();
    REQUIRE(a3.grad() == std::vector<double>{1, 1});
    REQUIRE(b3.grad() == std::vector<double>{-1, -1});
}

TEST_CASE("scale and scalar ops") {
    Tensor a = Tensor::from_data({3}, {1, -2, 3}).set_requires_grad(true);
    Tensor y = scale(a, 2.5);
    REQUIRE(y.values() == std::vector<double>{2.5, -5, 7.5});
    sum(y).backward();
    REQUIRE(a.grad() == std::vector<double>{2.5, 2.5, 2.5});
    REQUIRE(add_scalar(a, 1.0).values() == std::vector<double>{2, -1, 4});
    REQUIRE(neg(a).values() == std::vector<double>{-1, 2, -3});
}

TEST_CASE("same tensor used twice accumulates both paths") {
    Tensor x = Tensor::from_data({1}, {2}).set_requires_grad(true);
    Tensor y = mul(x, x);
    REQUIRE(y.values()[0] == 4.0);
    y.backward();
    REQUIRE(x.grad()[0] == 4.0);

    Tensor a = Tensor::from_data({1}, {3}).set_requires_grad(true);
    Tensor m = scale(a, 2.0);
    Tensor e = add(m, m);
    e.backward();
    REQUIRE(a.grad()[0] == 4.0);
}

TEST_CASE("gradient accumulation persists until zero_grad") {
    Tensor x = Tensor::from_data({2}, {1, 2}).set_requires_grad(true);
    Tensor l = sum(mul(x, x));
    l.backward();
    REQUIRE(x.grad() == std::vector<double>{2, 4});
    l.backward();
    REQUIRE(x.grad() == std::vector<double>{4, 8});
    x.zero_grad();
    REQUIRE(!x.has_grad());
    REQUIRE_THROWS_AS(x.grad(), ContractError);
    l.backward(2.0);
    REQUIRE(x.grad() == std::vector<double>{4, 8});
}

TEST_CASE("backward contract") {
    Tensor x = Tensor::from_data({2}, {1, 2}).set_requires_grad(true);
    REQUIRE_THROWS_AS(x.backward(), ContractError);
    Tensor c = Tensor::scalar(5.0);
    c.backward();  // no-grad root is a no-op
    REQUIRE((!c.has_grad() || c.grad()[0] == 1.0));
}

TEST_CASE("detach cuts the graph") {
    Tensor x = Tensor::from_data({2}, {1, 2}).set_requires_grad(true);
    Tensor d = scale(x, 3.0).detach();
    REQUIRE(!d.requires_grad());
    REQUIRE(d.values() == std::vector<double>{3, 6});
    Tensor l = sum(mul(d, d));
    l.backward();
    REQUIRE(!x.has_grad());
}

TEST_CASE("tape linearizes each reachable node once, parents first") {
    Tensor a = Tensor::from_data({1}, {2}).set_requires_grad(true);
    Tensor b = Tensor::from_data({1}, {3}).set_requires_grad(true);
    Tensor m = mul(a, b);
    Tensor y = add(m, a);
    Tape tape = Tape::record(y);
    const auto& order = tape.order();
    std::unordered_set<const Node*> uniq(order.begin(), order.end());
    REQUIRE(uniq.size() == order.size());
    auto pos = [&](const Tensor& t) {
        for (std::size_t i = 0; i < order.size(); ++i)
            if (order[i] == t.node().get()) return static_cast<long>(i);
        return -1L;
    };
    REQUIRE(pos(a) >= 0);
    REQUIRE(pos(b) >= 0);
    REQUIRE(pos(m) >= 0);
    REQUIRE(pos(y) == static_cast<long>(order.size() - 1));
    REQUIRE(pos(a) < pos(m));
    REQUIRE(pos(b) < pos(m));
    REQUIRE(pos(m) < pos(y));

    y.backward();
    REQUIRE(a.grad()[0] == 4.0);  // b + 1
    REQUIRE(b.grad()[0] == 2.0);
}

TEST_CASE("permute transpose reshape") {
    Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor t = transpose(a);
    REQUIRE(t.shape() == Shape{3, 2});
    REQUIRE(t.values() == std::vector<double>{1, 4, 2, 5, 3, 6});
    REQUIRE(transpose(t).values() == a.values());

    Tensor p = Tensor::from_data({2, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
    Tensor q = permute(p, {2, 0, 1});
    REQUIRE(q.shape() == Shape{2, 2, 2});
    REQUIRE(q.at({0, 1, 0}) == p.at({1, 0, 0}));
    REQUIRE(q.at({1, 0, 1}) == p.at({0, 1, 1}));
    REQUIRE_THROWS_AS(permute(p, {0, 1}), ShapeError);
    REQUIRE_THROWS_AS(permute(p, {0, 1, 1}), ShapeError);

    Tensor r = reshape(a, {3, 2});
    REQUIRE(r.values() == a.values());
    REQUIRE_THROWS_AS(reshape(a, {4, 2}), ShapeError);

    Tensor g = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}).set_requires_grad(true);
    Tensor w = Tensor::from_data({3, 2}, {1, 0, 0, 1, 1, 1});
    sum(mul(transpose(g), w)).backward();
    REQUIRE(g.grad() == std::vector<double>{1, 0, 1, 0, 1, 1});
}

TEST_CASE("slice_leading keeps the leading block") {
    Tensor a = Tensor::from_data({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor s = slice_leading(a, {2, 2});
    REQUIRE(s.values() == std::vector<double>{1, 2, 4, 5});
    REQUIRE(slice_leading(a, {3, 3}).values() == a.values());
    REQUIRE_THROWS_AS(slice_leading(a, {4, 3}), ShapeError);
    REQUIRE_THROWS_AS(slice_leading(a, {3}), ShapeError);

    Tensor b = Tensor::from_data({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}).set_requires_grad(true);
    sum(slice_leading(b, {2, 2})).backward();
    REQUIRE(b.grad() == std::vector<double>{1, 1, 0, 1, 1, 0, 0, 0, 0});

    Tensor c = Tensor::from_data({2, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
    Tensor sc = slice_leading(c, {2, 1, 2});
    REQUIRE(sc.values() == std::vector<double>{0, 1, 4, 5});
}

TEST_CASE("reductions") {
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4}).set_requires_grad(true);
    REQUIRE(sum(a).item() == 10.0);
    REQUIRE(mean(a).item() == 2.5);
    mean(a).backward();
    REQUIRE(a.grad() == std::vector<double>{0.25, 0.25, 0.25, 0.25});

    Tensor m = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    REQUIRE(mean_axis(m, 0).values() == std::vector<double>{2, 3});
    REQUIRE(mean_axis(m, 1).values() == std::vector<double>{1.5, 3.5});
    REQUIRE_THROWS_AS(mean_axis(m, 2), ShapeError);

    Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4}).set_requires_grad(true);
    Tensor w = Tensor::from_data({2}, {1, 10});
    sum(mul(mean_axis(x, 1), w)).backward();
    REQUIRE(x.grad() == std::vector<double>{0.5, 0.5, 5, 5});
}

TEST_CASE("softmax is stable and shift invariant") {
    Tensor big = softmax(Tensor::from_data({2}, {1000, 0}));
    REQUIRE(std::isfinite(big.values()[0]));
    REQUIRE(big.values()[0] == Approx(1.0).margin(1e-12));
    REQUIRE(big.values()[1] == Approx(0.0).margin(1e-12));

    REQUIRE(softmax(Tensor::from_data({2}, {0, 0})).values() == std::vector<double>{0.5, 0.5});

    Rng rng(3);
    Tensor z = Tensor::uniform({4, 5}, -2, 2, rng);
    std::vector<double> shifted = z.values();
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t i = 0; i < 5; ++i) shifted[r * 5 + i] += 7.25;
    Tensor p1 = softmax(z);
    Tensor p2 = softmax(Tensor::from_data({4, 5}, shifted));
    for (std::size_t i = 0; i < p1.size(); ++i)
        REQUIRE(p1.values()[i] == Approx(p2.values()[i]).margin(1e-14));
    for (std::size_t r = 0; r < 4; ++r) {
        double s = 0;
        for (std::size_t i = 0; i < 5; ++i) s += p1.values()[r * 5 + i];
        REQUIRE(s == Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("layer_norm normalizes the last dim") {
    Rng rng(11);
    Tensor x = Tensor::uniform({3, 8}, -5, 5, rng);
    Tensor g = Tensor::full({8}, 1.0);
    Tensor b = Tensor::zeros({8});
    Tensor y = layer_norm(x, g, b);
    for (std::size_t r = 0; r < 3; ++r) {
        double mu = 0, var = 0;
        for (std::size_t i = 0; i < 8; ++i) mu += y.values()[r * 8 + i];
        mu /= 8;
        for (std::size_t i = 0; i < 8; ++i) {
            double d = y.values()[r * 8 + i] - mu;
            var += d * d;
        }
        var /= 8;
        REQUIRE(mu == Approx(0.0).margin(1e-12));
        REQUIRE(var == Approx(1.0).margin(1e-4));
    }
    Tensor g2 = Tensor::from_data({8}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor b2 = Tensor::from_data({8}, {8, 7, 6, 5, 4, 3, 2, 1});
    Tensor y2 = layer_norm(x, g2, b2);
    for (std::size_t i = 0; i < 24; ++i) {
        double expect = y.values()[i] * g2.values()[i % 8] + b2.values()[i % 8];
        REQUIRE(y2.values()[i] == Approx(expect).margin(1e-12));
    }
    REQUIRE_THROWS_AS(layer_norm(x, Tensor::zeros({4}), b), ShapeError);
}

TEST_CASE("gelu matches normal-cdf oracle") {
    // Phi(0)=0.5, Phi(1)=0.8413447460685429, Phi(3)=0.9986501019683699
    Tensor x = Tensor::from_data({4}, {0, 1, 3, -3});
    Tensor y = gelu(x);
    REQUIRE(y.values()[0] == 0.0);
    REQUIRE(y.values()[1] == Approx(0.8413447460685429).margin(1e-12));
    REQUIRE(y.values()[2] == Approx(3 * 0.9986501019683699).margin(1e-12));
    REQUIRE(y.values()[3] == Approx(-3 * (1 - 0.9986501019683699)).margin(1e-12));
}

TEST_CASE("embedding lookup") {
    Tensor table = Tensor::from_data({3, 2}, {0, 1, 10, 11, 20, 21}).set_requires_grad(true);
    Tensor out = embedding_lookup(table, {2, 0, 0, 1}, 2, 2);
    REQUIRE(out.shape() == Shape{2, 2, 2});
    REQUIRE(out.values() == std::vector<double>{20, 21, 0, 1, 0, 1, 10, 11});
    REQUIRE_THROWS_AS(embedding_lookup(table, {3, 0, 0, 1}, 2, 2), IndexError);
    REQUIRE_THROWS_AS(embedding_lookup(table, {-1, 0, 0, 1}, 2, 2), IndexError);
    REQUIRE_THROWS_AS(embedding_lookup(table, {0, 1}, 2, 2), ShapeError);

    sum(out).backward();
    // token 0 used twice, tokens 1 and 2 once
    REQUIRE(table.grad() == std::vector<double>{2, 2, 1, 1, 1, 1});
}

TEST_CASE("cross entropy with index targets") {
    Tensor z = Tensor::from_data({1, 2}, {0, 0});
    REQUIRE(cross_entropy(z, std::vector<int>{0}).item() == Approx(std::log(2.0)).margin(1e-12));

    Tensor z4 = Tensor::zeros({2, 4});
    REQUIRE(cross_entropy(z4, std::vector<int>{1, 3}).item() == Approx(std::log(4.0)).margin(1e-12));

    // stability at extreme logits
    Tensor ze = Tensor::from_data({1, 2}, {1000, 0});
    REQUIRE(cross_entropy(ze, std::vector<int>{0}).item() == Approx(0.0).margin(1e-12));
    REQUIRE(cross_entropy(ze, std::vector<int>{1}).item() == Approx(1000.0).margin(1e-9));

    REQUIRE_THROWS_AS(cross_entropy(z4, std::vector<int>{1}), ShapeError);
    REQUIRE_THROWS_AS(cross_entropy(z4, std::vector<int>{1, 4}), IndexError);

    // gradient: softmax minus one-hot, averaged over rows
    Tensor zg = Tensor::from_data({1, 2}, {0, 0}).set_requires_grad(true);
    cross_entropy(zg, std::vector<int>{0}).backward();
    REQUIRE(zg.grad()[0] == Approx(-0.5).margin(1e-12));
    REQUIRE(zg.grad()[1] == Approx(0.5).margin(1e-12));
}

TEST_CASE("cross entropy with soft targets matches one-hot case") {
    Rng rng(5);
    Tensor z = Tensor::uniform({3, 4}, -2, 2, rng);
    Tensor onehot = Tensor::zeros({3, 4});
    std::vector<int> idx{2, 0, 3};
    for (std::size_t r = 0; r < 3; ++r) onehot.values_mut()[r * 4 + idx[r]] = 1.0;
    double a = cross_entropy(z, idx).item();
    double b = cross_entropy(z, onehot).item();
    REQUIRE(a == Approx(b).margin(1e-12));
    REQUIRE_THROWS_AS(cross_entropy(z, Tensor::zeros({4, 3})), ShapeError);
}

TEST_CASE("kl divergence oracle values") {
    Tensor u = Tensor::from_data({2}, {0.5, 0.5});
    REQUIRE(kl_divergence(u, u).item() == 0.0);

    Tensor q = Tensor::from_data({2}, {0.9, 0.1});
    // 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1) = ln(5/3)
    REQUIRE(kl_divergence(u, q).item() == Approx(0.5108256237659907).margin(1e-12));

    // 0 log 0 convention drops the zero-mass term
    Tensor p10 = Tensor::from_data({2}, {1.0, 0.0});
    REQUIRE(kl_divergence(p10, u).item() == Approx(std::log(2.0)).margin(1e-12));

    // mean across rows
    Tensor P = Tensor::from_data({2, 2}, {0.5, 0.5, 1.0, 0.0});
    Tensor Q = Tensor::from_data({2, 2}, {0.9, 0.1, 0.5, 0.5});
    double expect = 0.5 * (0.5108256237659907 + std::log(2.0));
    REQUIRE(kl_divergence(P, Q).item() == Approx(expect).margin(1e-12));

    Rng rng(9);
    Tensor r = softmax(Tensor::uniform({3, 5}, -1, 1, rng));
    REQUIRE(kl_divergence(r, r).item() == 0.0);

    REQUIRE_THROWS_AS(kl_divergence(u, p10), DivergenceError);
    REQUIRE_THROWS_AS(kl_divergence(u, Tensor::zeros({3})), ShapeError);
}

TEST_CASE("mse") {
    Tensor a = Tensor::from_data({2}, {1, 2});
    Tensor b = Tensor::from_data({2}, {3, 5});
    REQUIRE(mse(a, b).item() == Approx(6.5).margin(1e-12));
    REQUIRE(mse(a, a).item() == 0.0);
    REQUIRE_THROWS_AS(mse(a, Tensor::zeros({3})), ShapeError);

    Tensor ag = Tensor::from_data({2}, {1, 2}).set_requires_grad(true);
    Tensor bg = Tensor::from_data({2}, {3, 5}).set_requires_grad(true);
    mse(ag, bg).backward();
    REQUIRE(ag.grad() == std::vector<double>{-2, -3});
    REQUIRE(bg.grad() == std::vector<double>{2, 3});
}

TEST_CASE("independent graphs on separate threads") {
    auto run = [](double x0, double* out) {
        Tensor x = Tensor::from_data({1}, {x0}).set_requires_grad(true);
        Tensor l = sum(mul(x, x));
        l.backward();
        *out = x.grad()[0];
    };
    double g1 = 0, g2 = 0;
    std::thread t1(run, 3.0, &g1);
    std::thread t2(run, 4.0, &g2);
    t1.join();
    t2.join();
    REQUIRE(g1 == 6.0);
    REQUIRE(g2 == 8.0);
}
