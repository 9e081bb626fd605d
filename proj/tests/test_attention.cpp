// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "elastic/attention.hpp"
#include "elastic/rng.hpp"

using namespace elastic;

namespace {

Tensor randt(Graph& g, Rng& rng, std::size_t r, std::size_t c, bool grad = false) {
    return g.leaf({r, c}, rng.uniform_vec(r * c, -1.5, 1.5), grad);
}

// Gather-based reference: per query row, softmax over the allowed keys only.
std::vector<double> gather_oracle(const std::vector<double>& q, const std::vector<double>& k,
                                  const std::vector<double>& v, std::size_t s, std::size_t d,
                                  const AttnMask& mask) {
    std::vector<double> out(s * d, 0.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t i = 0; i < s; ++i) {
        std::vector<std::size_t> keys;
        for (std::size_t j = 0; j < s; ++j) {
            if (mask.at(i, j)) keys.push_back(j);
        }
        std::vector<double> scores;
        for (std::size_t j : keys) {
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) acc += q[i * d + c] * k[j * d + c];
            scores.push_back(acc * scale);
        }
        double mx = scores[0];
        for (double x : scores) mx = std::max(mx, x);
        double z = 0.0;
        for (auto& x : scores) {
            x = std::exp(x - mx);
            z += x;
        }
        for (std::size_t t = 0; t < keys.size(); ++t) {
            const double p = scores[t] / z;
            for (std::size_t c = 0; c < d; ++c) out[i * d + c] += p * v[keys[t] * d + c];
        }
    }
    return out;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("full attention singleton row returns V") {
    Graph g;
    Rng rng(1);
    Tensor q = randt(g, rng, 1, 4), k = randt(g, rng, 1, 4), v = randt(g, rng, 1, 4);
    CHECK(full_attention(q, k, v, true).value() == v.value());
}

TEST_CASE("identical keys give causal running means of V") {
    Graph g;
    Rng rng(2);
    const std::size_t s = 5, d = 3;
    std::vector<double> krow = rng.uniform_vec(d, -1, 1);
    std::vector<double> kv;
    for (std::size_t i = 0; i < s; ++i) kv.insert(kv.end(), krow.begin(), krow.end());
    Tensor q = randt(g, rng, s, d);
    Tensor k = g.leaf({s, d}, kv);
    Tensor v = randt(g, rng, s, d);
    auto out = full_attention(q, k, v, true).value();
    const auto& vv = v.value();
    for (std::size_t i = 0; i < s; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
            double mean = 0.0;
            for (std::size_t j = 0; j <= i; ++j) mean += vv[j * d + c];
            mean /= static_cast<double>(i + 1);
            CHECK(std::abs(out[i * d + c] - mean) <= 1e-12);
        }
    }
}

TEST_CASE("full attention matches direct per-row evaluation") {
    Graph g;
    Rng rng(3);
    const std::size_t s = 3, d = 2;
    Tensor q = randt(g, rng, s, d), k = randt(g, rng, s, d), v = randt(g, rng, s, d);
    auto got = full_attention(q, k, v, true).value();
    auto want = gather_oracle(q.value(), k.value(), v.value(), s, d, causal_mask(s));
    CHECK(max_abs_diff(got, want) <= 1e-10);
}

TEST_CASE("streaming mask rule") {
    {
        AttnMask m = streaming_mask(4, 0, 4);
        CHECK(m.allowed == causal_mask(4).allowed);
    }
    {
        AttnMask m = streaming_mask(5, 1, 2);
        std::vector<std::size_t> row4;
        for (std::size_t j = 0; j < 5; ++j) {
            if (m.at(4, j)) row4.push_back(j);
        }
        CHECK(row4 == std::vector<std::size_t>{0, 3, 4});
    }
    CHECK_THROWS_AS(streaming_mask(4, 1, 0), ValueError);
    {
        // full-scale default: sink 128 / window 2048 covers s <= 2176
        AttnMask m = streaming_mask(2176, 128, 2048);
        CHECK(m.allowed == causal_mask(2176).allowed);
    }
}

TEST_CASE("sparse attention reductions and oracle") {
    Rng rng(4);
    const std::size_t s = 4, d = 3;
    {
        // all-true mask equals non-causal full attention
        Graph g;
        Tensor q = randt(g, rng, s, d), k = randt(g, rng, s, d), v = randt(g, rng, s, d);
        AttnMask full_true;
        full_true.s = s;
        full_true.causal = false;
        full_true.allowed.assign(s * s, 1);
        auto a = sparse_attention(q, k, v, full_true).value();
        auto b = full_attention(q, k, v, false).value();
        CHECK(max_abs_diff(a, b) <= 1e-12);
    }
    {
        // self-only mask returns V
        Graph g;
        Tensor q = randt(g, rng, s, d), k = randt(g, rng, s, d), v = randt(g, rng, s, d);
        AttnMask self;
        self.s = s;
        self.causal = true;
        self.allowed.assign(s * s, 0);
        for (std::size_t i = 0; i < s; ++i) self.allowed[i * s + i] = 1;
        CHECK(max_abs_diff(sparse_attention(q, k, v, self).value(), v.value()) <= 1e-15);
    }
    {
        // random causal masks against the gather oracle, all s <= 8
        for (std::size_t n = 1; n <= 8; ++n) {
            for (int trial = 0; trial < 8; ++trial) {
                Graph g;
                Tensor q = randt(g, rng, n, d), k = randt(g, rng, n, d), v = randt(g, rng, n, d);
                AttnMask m;
                m.s = n;
                m.causal = true;
                m.allowed.assign(n * n, 0);
                for (std::size_t i = 0; i < n; ++i) {
                    m.allowed[i * n + i] = 1;  // keep rows non-empty
                    for (std::size_t j = 0; j < i; ++j) {
                        m.allowed[i * n + j] = rng.uniform01() < 0.5 ? 1 : 0;
                    }
                }
                auto got = sparse_attention(q, k, v, m).value();
                auto want = gather_oracle(q.value(), k.value(), v.value(), n, d, m);
                CHECK(max_abs_diff(got, want) <= 1e-10);
            }
        }
    }
    {
        // empty row rejected
        Graph g;
        Tensor q = randt(g, rng, 2, d), k = randt(g, rng, 2, d), v = randt(g, rng, 2, d);
        AttnMask m;
        m.s = 2;
        m.causal = true;
        m.allowed = {1, 0, 0, 0};  // row 1 attends nothing
        CHECK_THROWS_AS(sparse_attention(q, k, v, m), MaskError);
    }
}

TEST_CASE("causality: rows above i ignore later key/value changes") {
    Rng rng(5);
    const std::size_t s = 6, d = 3;
    auto qv = rng.uniform_vec(s * d, -1, 1);
    auto kv = rng.uniform_vec(s * d, -1, 1);
    auto vv = rng.uniform_vec(s * d, -1, 1);
    Graph g1;
    auto base = full_attention(g1.leaf({s, d}, qv), g1.leaf({s, d}, kv), g1.leaf({s, d}, vv), true)
                    .value();
    const std::size_t cut = 3;  // perturb rows > cut
    auto kv2 = kv, vv2 = vv;
    for (std::size_t i = cut + 1; i < s; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
            kv2[i * d + c] = rng.uniform(-50, 50);
            vv2[i * d + c] = rng.uniform(-50, 50);
        }
    }
    Graph g2;
    auto pert =
        full_attention(g2.leaf({s, d}, qv), g2.leaf({s, d}, kv2), g2.leaf({s, d}, vv2), true)
            .value();
    for (std::size_t i = 0; i <= cut; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
            CHECK(base[i * d + c] == pert[i * d + c]);  // exact, by masking
        }
    }
}

TEST_CASE("block sparse mask") {
    Rng rng(6);
    const std::size_t d = 4;
    {
        // threshold 1.0 keeps all causal blocks -> equals full attention
        Graph g;
        const std::size_t s = 8;
        Tensor q = randt(g, rng, s, d), k = randt(g, rng, s, d), v = randt(g, rng, s, d);
        AttnMask m = block_sparse_mask(q, k, 2, 1.0);
        CHECK(m.allowed == causal_mask(s).allowed);
        auto a = sparse_attention(q, k, v, m).value();
        auto b = full_attention(q, k, v, true).value();
        CHECK(max_abs_diff(a, b) <= 1e-9);
    }
    {
        // single block -> full causal regardless of threshold
        Graph g;
        Tensor q = randt(g, rng, 3, d), k = randt(g, rng, 3, d);
        AttnMask m = block_sparse_mask(q, k, 4, 0.05);
        CHECK(m.allowed == causal_mask(3).allowed);
    }
    {
        // brute-force oracle: the kept set must be the minimum-cardinality
        // diagonal-containing subset reaching the threshold, with the largest
        // total mass among those (greedy order by decreasing mass)
        const std::size_t s = 8, block = 2, nblocks = s / block;
        for (int trial = 0; trial < 10; ++trial) {
            Graph g;
            Tensor q = randt(g, rng, s, d), k = randt(g, rng, s, d);
            const double thr = 0.6 + 0.35 * rng.uniform01();
            AttnMask m = block_sparse_mask(q, k, block, thr);

            // recompute block masses from scratch (per-row causal softmax)
            Graph g2;
            Tensor scores = scale(matmul(g2.leaf({s, d}, q.value()),
                                         transpose(g2.leaf({s, d}, k.value()))),
                                  1.0 / std::sqrt(static_cast<double>(d)));
            std::vector<std::uint8_t> fill(s * s, 0);
            for (std::size_t i = 0; i < s; ++i) {
                for (std::size_t j = i + 1; j < s; ++j) fill[i * s + j] = 1;
            }
            auto probs = softmax_lastdim(masked_fill(scores, fill, kMaskFill)).value();

            for (std::size_t qb = 0; qb < nblocks; ++qb) {
                std::vector<double> mass(qb + 1, 0.0);
                for (std::size_t i = qb * block; i < (qb + 1) * block; ++i) {
                    for (std::size_t j = 0; j <= i; ++j) mass[j / block] += probs[i * s + j];
                }
                for (auto& x : mass) x /= static_cast<double>(block);

                std::vector<std::size_t> got;
                const std::size_t probe_row = qb * block + block - 1;
                for (std::size_t kb = 0; kb <= qb; ++kb) {
                    if (m.at(probe_row, kb * block)) got.push_back(kb);
                }

                std::vector<std::size_t> best;
                double best_mass = -1.0;
                for (std::size_t bits = 0; bits < (1u << (qb + 1)); ++bits) {
                    if (!(bits & (1u << qb))) continue;  // diagonal block required
                    double total = 0.0;
                    std::vector<std::size_t> subset;
                    for (std::size_t b = 0; b <= qb; ++b) {
                        if (bits & (1u << b)) {
                            total += mass[b];
                            subset.push_back(b);
                        }
                    }
                    if (total < thr && subset.size() != qb + 1) continue;
                    if (best.empty() || subset.size() < best.size() ||
                        (subset.size() == best.size() && total > best_mass)) {
                        best = subset;
                        best_mass = total;
                    }
                }
                CHECK(got == best);
            }
        }
    }
    CHECK_THROWS_AS(SparsityPattern::block_sparse(4, 0.0), ValueError);
    CHECK_THROWS_AS(SparsityPattern::block_sparse(4, 1.5), ValueError);
}

TEST_CASE("streaming rho matches the row formula and the mask count") {
    {
        SparsityPattern p = SparsityPattern::streaming(1, 2);
        double want = 0.0;
        for (int i = 0; i < 8; ++i) {
            want += std::max(0.0, (i + 1) - 3.0) / (i + 1);
        }
        want /= 8.0;
        CHECK(p.rho(8) == doctest::Approx(want).epsilon(1e-15));
        CHECK(p.rho(8) == mask_rho(streaming_mask(8, 1, 2)));
    }
    for (std::size_t s = 1; s <= 16; ++s) {
        for (std::size_t sink : {0u, 1u, 2u, 5u}) {
            for (std::size_t window : {1u, 2u, 4u, 16u}) {
                SparsityPattern p = SparsityPattern::streaming(sink, window);
                CHECK(p.rho(s) == mask_rho(streaming_mask(s, sink, window)));
                if (sink + window >= s) CHECK(p.rho(s) == 0.0);
            }
        }
    }
    CHECK(SparsityPattern::full().rho(100) == 0.0);
}

TEST_CASE("hybrid layer composition") {
    Rng rng(8);
    const std::size_t s = 4, d = 3, heads = 2;
    Graph g;
    std::vector<Tensor> q, k, v;
    for (std::size_t h = 0; h < heads; ++h) {
        q.push_back(randt(g, rng, s, d));
        k.push_back(randt(g, rng, s, d));
        v.push_back(randt(g, rng, s, d));
    }
    const SparsityPattern sa = SparsityPattern::streaming(1, 2);

    std::vector<HeadAssignment> all_fa{{0, 0, HeadMode::FA}, {0, 1, HeadMode::FA}};
    auto hy = hybrid_layer(q, k, v, all_fa, sa).value();
    auto h0 = full_attention(q[0], k[0], v[0], true).value();
    auto h1 = full_attention(q[1], k[1], v[1], true).value();
    for (std::size_t i = 0; i < s; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
            CHECK(hy[i * 2 * d + c] == h0[i * d + c]);
            CHECK(hy[i * 2 * d + d + c] == h1[i * d + c]);
        }
    }

    // all SA with window >= s reduces to all FA
    std::vector<HeadAssignment> all_sa{{0, 0, HeadMode::SA}, {0, 1, HeadMode::SA}};
    auto wide = hybrid_layer(q, k, v, all_sa, SparsityPattern::streaming(0, s)).value();
    CHECK(max_abs_diff(wide, hy) <= 1e-9);

    // mixed assignment against per-head outputs
    std::vector<HeadAssignment> mixed{{0, 0, HeadMode::FA}, {0, 1, HeadMode::SA}};
    auto mix = hybrid_layer(q, k, v, mixed, sa).value();
    auto sa1 = sparse_attention(q[1], k[1], v[1], streaming_mask(s, 1, 2)).value();
    for (std::size_t i = 0; i < s; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
            CHECK(std::abs(mix[i * 2 * d + c] - h0[i * d + c]) <= 1e-10);
            CHECK(std::abs(mix[i * 2 * d + d + c] - sa1[i * d + c]) <= 1e-10);
        }
    }

    // head order permutation permutes feature blocks
    std::vector<Tensor> q2{q[1], q[0]}, k2{k[1], k[0]}, v2{v[1], v[0]};
    auto swapped = hybrid_layer(q2, k2, v2, all_fa, sa).value();
    for (std::size_t i = 0; i < s; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
            CHECK(swapped[i * 2 * d + c] == hy[i * 2 * d + d + c]);
            CHECK(swapped[i * 2 * d + d + c] == hy[i * 2 * d + c]);
        }
    }

    // assignment validation
    std::vector<HeadAssignment> dup{{0, 0, HeadMode::FA}, {0, 0, HeadMode::SA}};
    CHECK_THROWS_AS(hybrid_layer(q, k, v, dup, sa), ValueError);
    std::vector<HeadAssignment> missing{{0, 0, HeadMode::FA}};
    CHECK_THROWS_AS(hybrid_layer(q, k, v, missing, sa), ValueError);
}

TEST_CASE("rho = 0 patterns reduce to full attention") {
    Rng rng(9);
    const std::size_t d = 3;
    for (int trial = 0; trial < 12; ++trial) {
        const std::size_t s = 2 + rng.uniform_int(6);
        Graph g;
        Tensor q = randt(g, rng, s, d), k = randt(g, rng, s, d), v = randt(g, rng, s, d);
        auto full = full_attention(q, k, v, true).value();

        SparsityPattern wide = SparsityPattern::streaming(0, s);
        CHECK(wide.rho(s) == 0.0);
        auto a = sparse_attention(q, k, v, pattern_mask(wide, q, k)).value();
        CHECK(max_abs_diff(a, full) <= 1e-9);

        SparsityPattern block = SparsityPattern::block_sparse(2, 1.0);
        auto b = sparse_attention(q, k, v, pattern_mask(block, q, k)).value();
        CHECK(max_abs_diff(b, full) <= 1e-9);

        auto c = sparse_attention(q, k, v, causal_mask(s)).value();
        CHECK(max_abs_diff(c, full) <= 1e-9);
    }
}
