// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "elastic/gradcheck.hpp"
#include "elastic/graph.hpp"
#include "elastic/rng.hpp"

using namespace elastic;

namespace {

Tensor leafv(Graph& g, Shape s, std::vector<double> v, bool grad = false) {
    return g.leaf(std::move(s), std::move(v), grad);
}

}  // namespace

TEST_CASE("matmul identity and hand arithmetic") {
    Graph g;
    Tensor eye = leafv(g, {2, 2}, {1, 0, 0, 1});
    Tensor m = leafv(g, {2, 2}, {3.5, -1.25, 2.0, 7.0});
    CHECK(matmul(eye, m).value() == m.value());

    Tensor a = leafv(g, {2, 2}, {1, 2, 3, 4});
    Tensor ones = leafv(g, {2, 1}, {1, 1});
    auto out = matmul(a, ones).value();
    CHECK(out[0] == 3.0);
    CHECK(out[1] == 7.0);
}

TEST_CASE("matmul shape error names both shapes") {
    Graph g;
    Tensor a = leafv(g, {2, 3}, std::vector<double>(6, 0.0));
    Tensor b = leafv(g, {2, 3}, std::vector<double>(6, 0.0));
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient of sum vs finite differences") {
    Rng rng(42);
    LossBuilder build = [](Graph&, const std::vector<Tensor>& ls) {
        return sum(matmul(ls[0], ls[1]));
    };
    auto rep = check_gradient(build, {{3, 4}, {4, 2}},
                              {rng.uniform_vec(12, -2, 2), rng.uniform_vec(8, -2, 2)}, 1e-6);
    CHECK(rep.pass);
}

TEST_CASE("softmax basics") {
    Graph g;
    auto u = softmax_lastdim(leafv(g, {1, 3}, {0, 0, 0})).value();
    for (double v : u) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

    // shift invariance: [x, x+c] -> [sigmoid(-c), sigmoid(c)]
    const double x = 0.37, c = 1.9;
    auto p = softmax_lastdim(leafv(g, {1, 2}, {x, x + c})).value();
    CHECK(p[0] == doctest::Approx(1.0 / (1.0 + std::exp(c))).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(1.0 / (1.0 + std::exp(-c))).epsilon(1e-12));

    // direct evaluation
    auto q = softmax_lastdim(leafv(g, {1, 3}, {1, 2, 3})).value();
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(std::abs(q[0] - std::exp(1.0) / z) <= 1e-12);
    CHECK(std::abs(q[1] - std::exp(2.0) / z) <= 1e-12);
    CHECK(std::abs(q[2] - std::exp(3.0) / z) <= 1e-12);
}

TEST_CASE("softmax rows sum to one and shifts cancel") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        Graph g;
        auto vals = rng.uniform_vec(4 * 6, -30, 30);
        Tensor x = leafv(g, {4, 6}, vals);
        auto y = softmax_lastdim(x).value();
        for (std::size_t i = 0; i < 4; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < 6; ++j) s += y[i * 6 + j];
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }
        const double shift = rng.uniform(-5, 5);
        auto shifted = vals;
        for (std::size_t j = 0; j < 6; ++j) shifted[2 * 6 + j] += shift;
        auto y2 = softmax_lastdim(leafv(g, {4, 6}, shifted)).value();
        for (std::size_t j = 0; j < 4 * 6; ++j) CHECK(std::abs(y2[j] - y[j]) <= 1e-12);
    }
}

TEST_CASE("elementwise basics") {
    Graph g;
    CHECK(sigmoid(leafv(g, {1}, {0})).item() == 0.5);
    CHECK(mean(leafv(g, {2, 3}, std::vector<double>(6, 2.75))).item() == doctest::Approx(2.75));
}

TEST_CASE("cross entropy examples") {
    {
        Graph g;
        Tensor logits = leafv(g, {1, 4}, {1.3, 1.3, 1.3, 1.3});
        CHECK(cross_entropy(logits, {2}).item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    }
    {
        Graph g;
        Tensor logits = leafv(g, {1, 3}, {100.0, 0.0, 0.0});
        CHECK(cross_entropy(logits, {0}).item() == doctest::Approx(0.0).epsilon(1e-10));
    }
    {
        // random instance against the direct formula
        Rng rng(3);
        auto vals = rng.uniform_vec(10, -2, 2);
        std::vector<std::size_t> labels{1, 4};
        Graph g;
        const double got = cross_entropy(leafv(g, {2, 5}, vals), labels).item();
        double want = 0.0;
        for (int i = 0; i < 2; ++i) {
            double z = 0.0;
            for (int j = 0; j < 5; ++j) z += std::exp(vals[i * 5 + j]);
            want -= vals[i * 5 + static_cast<int>(labels[i])] - std::log(z);
        }
        want /= 2.0;
        CHECK(std::abs(got - want) <= 1e-10);
    }
    {
        Graph g;
        Tensor logits = leafv(g, {1, 4}, {0, 0, 0, 0});
        CHECK_THROWS_AS(cross_entropy(logits, {4}), ValueError);
    }
}

TEST_CASE("cross entropy gradient is (softmax - onehot)/B") {
    Rng rng(11);
    auto vals = rng.uniform_vec(10, -2, 2);
    Graph g;
    Tensor logits = leafv(g, {2, 5}, vals, true);
    g.backward(cross_entropy(logits, {3, 0}));
    const auto& grad = logits.grad();
    for (int i = 0; i < 2; ++i) {
        double z = 0.0;
        for (int j = 0; j < 5; ++j) z += std::exp(vals[i * 5 + j]);
        for (int j = 0; j < 5; ++j) {
            double want = std::exp(vals[i * 5 + j]) / z;
            if ((i == 0 && j == 3) || (i == 1 && j == 0)) want -= 1.0;
            want /= 2.0;
            CHECK(std::abs(grad[i * 5 + j] - want) <= 1e-12);
        }
    }
}

TEST_CASE("detach semantics") {
    Rng rng(5);
    auto vals = rng.uniform_vec(6, -2, 2);
    {
        Graph g;
        Tensor x = leafv(g, {6}, vals, true);
        Tensor d = detach(x);
        CHECK(d.value() == x.value());
        g.backward(sum(d));
        CHECK(x.grad() == std::vector<double>(6, 0.0));
    }
    {
        // STE identity: d/dy sum(x + (y - detach(y))) = 1
        Graph g;
        Tensor x = leafv(g, {6}, vals, true);
        Tensor y = leafv(g, {6}, rng.uniform_vec(6, -2, 2), true);
        g.backward(sum(add(x, sub(y, detach(y)))));
        CHECK(x.grad() == std::vector<double>(6, 1.0));
        CHECK(y.grad() == std::vector<double>(6, 1.0));
    }
}

TEST_CASE("backward basics and misuse") {
    Rng rng(9);
    auto vals = rng.uniform_vec(5, -2, 2);
    {
        Graph g;
        Tensor x = leafv(g, {5}, vals, true);
        g.backward(sum(x));
        CHECK(x.grad() == std::vector<double>(5, 1.0));
    }
    {
        Graph g;
        Tensor x = leafv(g, {5}, vals, true);
        g.backward(sum(mul(x, x)));
        for (int i = 0; i < 5; ++i) CHECK(x.grad()[i] == doctest::Approx(2 * vals[i]).epsilon(1e-14));
    }
    {
        Graph g;
        Tensor x = leafv(g, {5}, vals, true);
        CHECK_THROWS_AS(g.backward(x), ValueError);  // non-scalar loss
        Tensor loss = sum(x);
        g.backward(loss);
        CHECK_THROWS_AS(g.backward(loss), ValueError);  // graph consumed
    }
}

TEST_CASE("masked_fill zeroes gradient through filled slots") {
    Graph g;
    Tensor x = leafv(g, {4}, {1, 2, 3, 4}, true);
    std::vector<std::uint8_t> mask{0, 1, 0, 1};
    Tensor y = masked_fill(x, mask, -9.0);
    CHECK(y.value() == std::vector<double>{1, -9, 3, -9});
    g.backward(sum(y));
    CHECK(x.grad() == std::vector<double>{1, 0, 1, 0});
}

TEST_CASE("finite value guards") {
    Graph g;
    CHECK_THROWS_AS(g.leaf({2}, {1.0, std::nan("")}), NumericError);
    set_debug_checks(true);
    Tensor x = g.leaf({1}, {800.0});
    CHECK_THROWS_AS(elastic::exp(x), NumericError);  // overflows to inf under the guard
    set_debug_checks(false);
    CHECK_NOTHROW(elastic::exp(x));
}

TEST_CASE("row broadcast add") {
    Graph g;
    Tensor a = leafv(g, {2, 3}, {1, 2, 3, 4, 5, 6}, true);
    Tensor b = leafv(g, {3}, {10, 20, 30}, true);
    Tensor y = add(a, b);
    CHECK(y.value() == std::vector<double>{11, 22, 33, 14, 25, 36});
    g.backward(sum(y));
    CHECK(b.grad() == std::vector<double>{2, 2, 2});
}

TEST_CASE("determinism: identical graphs produce identical bits") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        Graph g;
        Tensor a = g.leaf({4, 4}, rng.uniform_vec(16, -2, 2), true);
        Tensor b = g.leaf({4, 4}, rng.uniform_vec(16, -2, 2));
        Tensor loss = sum(softmax_lastdim(matmul(a, b)));
        g.backward(loss);
        auto out = a.grad();
        out.push_back(loss.item());
        return out;
    };
    CHECK(run(123) == run(123));
}
