// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "elastic/router.hpp"

using namespace elastic;

TEST_CASE("router parameter footprint at full scale") {
    RouterConfig rc;
    rc.heads = 8;
    rc.head_dim = 128;
    rc.hidden_mult = 4;
    RouterStack rs = RouterStack::init(1, rc, 1);
    const double count = static_cast<double>(rs.params_per_layer());
    CHECK(rs.params.total_size() == rs.params_per_layer());
    CHECK(std::abs(count - 270000.0) / 270000.0 <= 0.10);
    // two layers double it
    RouterStack rs2 = RouterStack::init(2, rc, 1);
    CHECK(rs2.params.total_size() == 2 * rs.params_per_layer());
}

TEST_CASE("boundary pooling") {
    {
        // constant sequence pools to the constant
        Graph g;
        Tensor k = g.leaf({7, 3}, std::vector<double>(21, 4.25));
        auto pooled = boundary_pool({k}, 2).value();
        for (double v : pooled) CHECK(v == doctest::Approx(4.25).epsilon(1e-15));
    }
    {
        // s <= 2*n_edge degenerates to the full mean
        Rng rng(2);
        auto vals = rng.uniform_vec(4 * 2, -1, 1);
        Graph g;
        Tensor k = g.leaf({4, 2}, vals);
        auto pooled = boundary_pool({k}, 3).value();
        for (std::size_t c = 0; c < 2; ++c) {
            double mean = 0.0;
            for (std::size_t i = 0; i < 4; ++i) mean += vals[i * 2 + c];
            mean /= 4.0;
            CHECK(pooled[c] == doctest::Approx(mean).epsilon(1e-15));
        }
    }
    {
        // s=6, n_edge=2 pools rows {0,1,4,5}
        std::vector<double> vals(6);
        for (int i = 0; i < 6; ++i) vals[i] = i * 10.0;
        Graph g;
        Tensor k = g.leaf({6, 1}, vals);
        auto pooled = boundary_pool({k}, 2).value();
        CHECK(pooled[0] == doctest::Approx((0.0 + 10.0 + 40.0 + 50.0) / 4.0).epsilon(1e-15));
    }
    {
        // interior positions do not affect the pooled value
        Rng rng(3);
        auto vals = rng.uniform_vec(10 * 2, -1, 1);
        auto vals2 = vals;
        for (std::size_t i = 3; i < 7; ++i) {
            vals2[i * 2] = rng.uniform(-9, 9);
            vals2[i * 2 + 1] = rng.uniform(-9, 9);
        }
        Graph g;
        auto a = boundary_pool({g.leaf({10, 2}, vals)}, 3).value();
        auto b = boundary_pool({g.leaf({10, 2}, vals2)}, 3).value();
        CHECK(a == b);
    }
    CHECK(boundary_indices(6, 2) == std::vector<std::size_t>{0, 1, 4, 5});
    CHECK(boundary_indices(3, 2) == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("router logits with zero parameters are zero") {
    RouterConfig rc;
    rc.heads = 3;
    rc.head_dim = 4;
    RouterStack rs = RouterStack::init(1, rc, 5);
    for (auto& e : rs.params.entries()) std::fill(e.value.begin(), e.value.end(), 0.0);
    Graph g;
    BoundParams bp = bind_params(g, rs.params, false);
    Rng rng(6);
    Tensor pooled = g.leaf({3, 4}, rng.uniform_vec(12, -1, 1));
    auto z = router_logits(router_layer_tensors(bp, 0), pooled).value();
    for (double v : z) CHECK(v == 0.0);
}

TEST_CASE("gumbel noise transform") {
    CHECK(std::abs(gumbel_from_uniform(1.0 / std::exp(1.0))) <= 1e-9);
    CHECK(gumbel_from_uniform(0.5) ==
          doctest::Approx(-std::log(std::log(2.0))).epsilon(1e-9));
    CHECK(gumbel_from_uniform(0.5) == doctest::Approx(0.36651).epsilon(1e-4));
    CHECK_THROWS_AS(gumbel_from_uniform(0.0), ValueError);
    CHECK_THROWS_AS(gumbel_from_uniform(1.0), ValueError);

    // Monte Carlo mean approaches the Euler-Mascheroni constant
    Rng rng(7);
    double acc = 0.0;
    const std::size_t n = 1000000;
    for (std::size_t i = 0; i < n; ++i) acc += gumbel_from_uniform(rng.uniform01());
    CHECK(std::abs(acc / n - 0.577215664901532) <= 0.01);
}

TEST_CASE("gumbel sigmoid routing") {
    {
        // equal logits, zero noise -> exactly 0.5
        Graph g;
        Tensor z = g.leaf({2, 2}, {0.3, 0.3, -1.2, -1.2});
        auto soft = gumbel_soft_route(z, std::vector<double>(4, 0.0), 1.0).value();
        CHECK(soft[1] == 0.5);
        CHECK(soft[3] == 0.5);
    }
    {
        // unit logit difference at tau=1 -> sigmoid(1)
        Graph g;
        Tensor z = g.leaf({1, 2}, {0.0, 1.0});
        auto soft = gumbel_soft_route(z, {0.0, 0.0}, 1.0).value();
        CHECK(soft[1] == doctest::Approx(0.7310585786300049).epsilon(1e-12));
        CHECK(soft[0] + soft[1] == doctest::Approx(1.0).epsilon(1e-9));
    }
    {
        // sharp temperature saturates
        Graph g;
        Tensor z = g.leaf({1, 2}, {0.0, 1.0});
        auto soft = gumbel_soft_route(z, {0.0, 0.0}, 0.01).value();
        CHECK(soft[1] >= 0.99);
    }
    {
        Graph g;
        Tensor z = g.leaf({1, 2}, {0.0, 1.0});
        CHECK_THROWS_AS(gumbel_soft_route(z, {0.0, 0.0}, 0.0), ValueError);
        CHECK_THROWS_AS(gumbel_soft_route(z, {0.0}, 1.0), ValueError);
    }
}

TEST_CASE("row sums and sharpening") {
    Rng rng(8);
    for (int trial = 0; trial < 25; ++trial) {
        Graph g;
        Tensor z = g.leaf({4, 2}, rng.uniform_vec(8, -3, 3));
        auto noise = sample_gumbel(rng, 8);
        double prev_max[4] = {0, 0, 0, 0};
        bool first = true;
        for (double tau : {2.0, 1.0, 0.5, 0.2, 0.05}) {
            auto soft = gumbel_soft_route(z, noise, tau).value();
            for (int h = 0; h < 4; ++h) {
                CHECK(std::abs(soft[h * 2] + soft[h * 2 + 1] - 1.0) <= 1e-9);
                const double mx = std::max(soft[h * 2], soft[h * 2 + 1]);
                if (!first) CHECK(mx >= prev_max[h] - 1e-12);
                prev_max[h] = mx;
            }
            first = false;
        }
    }
}

TEST_CASE("ste hardening") {
    {
        Graph g;
        Tensor soft = g.leaf({2, 2}, {0.3, 0.7, 0.5, 0.5});
        auto res = ste_harden(soft);
        CHECK(res.ste.value() == std::vector<double>{0, 1, 1, 0});  // tie resolves to FA
        CHECK(res.hard[0] == HeadMode::SA);
        CHECK(res.hard[1] == HeadMode::FA);
    }
    {
        // forward output is invariant to monotone rescaling of both columns
        Graph g;
        Rng rng(9);
        auto vals = rng.uniform_vec(6, 0.01, 0.99);
        Tensor soft = g.leaf({3, 2}, vals);
        auto cube = vals;
        for (auto& v : cube) v = v * v * v;  // strictly monotone on (0,1)
        Tensor soft3 = g.leaf({3, 2}, cube);
        CHECK(ste_harden(soft).ste.value() == ste_harden(soft3).ste.value());
    }
    {
        // gradient equals the soft path exactly
        Rng rng(10);
        auto zv = rng.uniform_vec(8, -2, 2);
        auto noise = sample_gumbel(rng, 8);
        auto w = rng.uniform_vec(8, -1, 1);
        auto grad_of = [&](bool harden) {
            Graph g;
            Tensor z = g.leaf({4, 2}, zv, true);
            Tensor soft = gumbel_soft_route(z, noise, 0.6);
            Tensor out = harden ? ste_harden(soft).ste : soft;
            g.backward(sum(mul(out, g.constant({4, 2}, w))));
            return z.grad();
        };
        CHECK(grad_of(true) == grad_of(false));
    }
}

TEST_CASE("temperature annealing") {
    AnnealSchedule sched;  // 1.0 -> 0.1 at rate 0.6
    CHECK(sched.tau(0.0) == 1.0);
    CHECK(sched.tau(1.0) == doctest::Approx(std::exp(-0.6)).epsilon(1e-12));
    CHECK(sched.tau(1.0) == doctest::Approx(0.5488116360940264).epsilon(1e-12));
    AnnealSchedule clamped{1.0, 0.6, 0.6};
    CHECK(clamped.tau(1.0) == 0.6);  // floor engages
    CHECK_THROWS_AS(sched.tau(-0.1), ValueError);
    CHECK_THROWS_AS(sched.tau(1.1), ValueError);
    // monotone non-increasing
    double prev = 1e9;
    for (double p = 0.0; p <= 1.0; p += 0.05) {
        const double t = sched.tau(p);
        CHECK(t <= prev + 1e-15);
        prev = t;
    }
}

TEST_CASE("route determinism and inference mode") {
    RouterConfig rc;
    rc.heads = 4;
    rc.head_dim = 8;
    rc.n_edge = 2;
    RouterStack rs = RouterStack::init(1, rc, 77);
    Rng data_rng(12);
    std::vector<std::vector<double>> kv;
    for (std::size_t h = 0; h < rc.heads; ++h) kv.push_back(data_rng.uniform_vec(10 * 8, -1, 1));

    auto route_with_seed = [&](std::uint64_t seed) {
        Graph g;
        BoundParams bp = bind_params(g, rs.params, false);
        std::vector<Tensor> kh;
        for (const auto& v : kv) kh.push_back(g.leaf({10, 8}, v));
        Rng noise(seed);
        RoutingDecision dec = route_train(router_layer_tensors(bp, 0), kh, rc.n_edge, 0.8, noise);
        return std::make_tuple(dec.soft.value(), dec.hard, dec.noise);
    };
    CHECK(route_with_seed(5) == route_with_seed(5));
    CHECK(std::get<2>(route_with_seed(5)) != std::get<2>(route_with_seed(6)));

    {
        // inference: hard mode is the argmax of the raw logits
        Graph g;
        BoundParams bp = bind_params(g, rs.params, false);
        std::vector<Tensor> kh;
        for (const auto& v : kv) kh.push_back(g.leaf({10, 8}, v));
        auto p = router_layer_tensors(bp, 0);
        RoutingDecision dec = route_infer(p, kh, rc.n_edge);
        auto z = router_logits(p, boundary_pool(kh, rc.n_edge)).value();
        for (std::size_t h = 0; h < rc.heads; ++h) {
            CHECK((dec.hard[h] == HeadMode::SA) == (z[h * 2 + 1] > z[h * 2]));
            // recorded soft distribution agrees with the hard argmax
            const bool soft_sa = dec.soft.value()[h * 2 + 1] > dec.soft.value()[h * 2];
            CHECK(soft_sa == (dec.hard[h] == HeadMode::SA));
        }
        CHECK(dec.noise.empty());
    }
}

TEST_CASE("hard routing distribution follows the logistic law") {
    // At tau=1, P(SA) = sigmoid(z1 - z0) because the Gumbel difference is
    // logistic. Light version here; the acceptance suite runs 1e5 draws.
    Rng rng(13);
    const double zdiff = 0.8;
    Graph g;
    Tensor z = g.leaf({1, 2}, {0.0, zdiff});
    std::size_t sa = 0;
    const std::size_t n = 20000;
    for (std::size_t i = 0; i < n; ++i) {
        auto noise = sample_gumbel(rng, 2);
        auto res = ste_harden(gumbel_soft_route(z, noise, 1.0));
        if (res.hard[0] == HeadMode::SA) ++sa;
    }
    const double want = 1.0 / (1.0 + std::exp(-zdiff));
    CHECK(std::abs(static_cast<double>(sa) / n - want) <= 0.02);
}
