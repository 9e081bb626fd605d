// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "elastic/analysis.hpp"

using namespace elastic;

namespace {

ModelDims tiny_dims() {
    ModelDims dims;
    dims.layers = 2;
    dims.heads = 2;
    dims.head_dim = 8;
    dims.vocab = 64;
    dims.max_seq = 64;
    dims.ffn_hidden = 16;
    return dims;
}

}  // namespace

TEST_CASE("uniform attention heads score |needle|/s") {
    // zero query/key projections -> causal softmax is uniform per row
    ModelDims dims = tiny_dims();
    Backbone model = Backbone::init(dims, 9);
    for (std::size_t l = 0; l < dims.layers; ++l) {
        for (const char* w : {"wq", "wk"}) {
            auto& e = model.params.at("l" + std::to_string(l) + "." + w);
            std::fill(e.value.begin(), e.value.end(), 0.0);
        }
    }
    TaskSpec spec = TaskSpec::needle(40, 4, 11);
    HeadScoreTable table = retrieval_score(model, spec, 8);
    const double want = 2.0 / 40.0;  // needle pair out of s keys at the last row
    for (double s : table.score) CHECK(s == doctest::Approx(want).epsilon(1e-9));
    // ranking is a permutation
    auto order = table.order;
    std::sort(order.begin(), order.end());
    for (std::size_t i = 0; i < order.size(); ++i) CHECK(order[i] == i);
}

TEST_CASE("scores live in [0,1] and rank deterministically") {
    ModelDims dims = tiny_dims();
    Backbone model = Backbone::init(dims, 10);
    TaskSpec spec = TaskSpec::needle(40, 4, 12);
    HeadScoreTable a = retrieval_score(model, spec, 6);
    HeadScoreTable b = retrieval_score(model, spec, 6);
    CHECK(a.score == b.score);
    for (double s : a.score) {
        CHECK(s >= 0.0);
        CHECK(s <= 1.0);
    }
    for (std::size_t r = 1; r < a.order.size(); ++r) {
        CHECK(a.score[a.order[r - 1]] >= a.score[a.order[r]]);
    }
}

TEST_CASE("progressive sparsification endpoints") {
    ModelDims dims = tiny_dims();
    Backbone model = Backbone::init(dims, 20);
    TaskSpec needle = TaskSpec::needle(40, 4, 21);
    TaskSpec local = TaskSpec::local(40, 2, 8, 22);
    std::vector<TaskSpec> tasks{needle, local};
    HeadScoreTable table = retrieval_score(model, needle, 4);
    const SparsityPattern pat = SparsityPattern::streaming(2, 8);

    auto curve = progressive_sparsify(model, table, {0.0, 1.0}, tasks, pat, 8, 4);
    REQUIRE(curve.size() == 4);

    // omega = 0 keeps every head on FA: must equal the all-FA evaluation
    EvalRouting all_fa;
    all_fa.fixed_modes.assign(dims.layers * dims.heads, HeadMode::FA);
    all_fa.sa_pattern = pat;
    all_fa.n_edge = 4;
    CHECK(curve[0].omega_msr == 0.0);
    CHECK(curve[0].accuracy == task_accuracy(model, needle, all_fa, 8));
    CHECK(curve[1].accuracy == task_accuracy(model, local, all_fa, 8));

    // omega = 1 converts every head: must equal the all-SA evaluation
    EvalRouting all_sa = all_fa;
    all_sa.fixed_modes.assign(dims.layers * dims.heads, HeadMode::SA);
    CHECK(curve[2].omega_msr == 1.0);
    CHECK(curve[2].accuracy == task_accuracy(model, needle, all_sa, 8));
    CHECK(curve[3].accuracy == task_accuracy(model, local, all_sa, 8));
}

TEST_CASE("heatmap frequencies are indicator means") {
    ModelDims dims = tiny_dims();
    Backbone model = Backbone::init(dims, 30);
    RouterConfig rc;
    rc.heads = dims.heads;
    rc.head_dim = dims.head_dim;
    rc.n_edge = 4;
    RouterStack router = RouterStack::init(dims.layers, rc, 31);
    std::vector<TaskSpec> tasks{TaskSpec::needle(40, 4, 32), TaskSpec::local(40, 2, 8, 33)};
    const SparsityPattern pat = SparsityPattern::streaming(2, 8);

    HeatmapResult hm = head_activation_heatmap(model, router, tasks, pat, 4, 10);
    REQUIRE(hm.fa_frequency.size() == 2);
    for (const auto& freq : hm.fa_frequency) {
        CHECK(freq.size() == dims.layers * dims.heads);
        for (double f : freq) {
            CHECK(f >= 0.0);
            CHECK(f <= 1.0);
        }
    }
    // disjoint shards aggregate to the sample-weighted mean
    HeatmapResult s1 = head_activation_heatmap(model, router, tasks, pat, 4, 5, 0);
    HeatmapResult s2 = head_activation_heatmap(model, router, tasks, pat, 4, 5, 5);
    for (std::size_t t = 0; t < 2; ++t) {
        for (std::size_t i = 0; i < hm.fa_frequency[t].size(); ++i) {
            CHECK(hm.fa_frequency[t][i] ==
                  doctest::Approx(0.5 * (s1.fa_frequency[t][i] + s2.fa_frequency[t][i]))
                      .epsilon(1e-12));
        }
    }
    // untrained deterministic routing on one task gives 0/1 frequencies
    HeatmapResult single = head_activation_heatmap(model, router, {tasks[0]}, pat, 4, 8);
    bool all_binary = true;
    for (double f : single.fa_frequency[0]) {
        all_binary = all_binary && (f == 0.0 || f == 1.0 || (f > 0.0 && f < 1.0));
    }
    CHECK(all_binary);
}

TEST_CASE("pairwise similarity metric") {
    Rng rng(40);
    std::vector<std::vector<double>> xu, xv;
    for (int i = 0; i < 6; ++i) xu.push_back(rng.uniform_vec(8, -1, 1));
    // identical sets give exactly 1
    CHECK(pairwise_similarity(xu, xu) == doctest::Approx(1.0).epsilon(1e-12));

    // orthogonal centroids after centering give ~0: u varies in dims 0..3,
    // v varies in dims 4..7, means are zero
    xu.clear();
    xv.clear();
    for (int i = 0; i < 10; ++i) {
        std::vector<double> a(8, 0.0), b(8, 0.0);
        a[i % 4] = (i < 5 ? 3.0 : -3.0) + 0.0;
        a[0] += 1.0;  // nonzero centroid component in dim 0
        b[4 + (i % 4)] = (i < 5 ? 2.0 : -2.0);
        b[4] += 1.0;  // nonzero centroid component in dim 4
        xu.push_back(a);
        xv.push_back(b);
    }
    CHECK(std::abs(pairwise_similarity(xu, xv)) <= 1e-9);
    CHECK_THROWS_AS(pairwise_similarity({}, xv), ValueError);
}

TEST_CASE("similarity matrices are symmetric with unit diagonal") {
    ModelDims dims = tiny_dims();
    Backbone model = Backbone::init(dims, 50);
    RouterConfig rc;
    rc.heads = dims.heads;
    rc.head_dim = dims.head_dim;
    rc.n_edge = 4;
    RouterStack router = RouterStack::init(dims.layers, rc, 51);
    std::vector<TaskSpec> tasks{TaskSpec::needle(40, 4, 52), TaskSpec::local(40, 2, 8, 53)};
    SimilarityResult sim = task_similarity(model, router, tasks, SparsityPattern::streaming(2, 8),
                                           4, 6, 0);
    for (std::size_t u = 0; u < 2; ++u) {
        CHECK(sim.m_before[u][u] == 1.0);
        CHECK(sim.m_after[u][u] == 1.0);
        for (std::size_t v = 0; v < 2; ++v) {
            CHECK(sim.m_before[u][v] == sim.m_before[v][u]);
            CHECK(std::abs(sim.m_before[u][v]) <= 1.0 + 1e-12);
            CHECK(std::abs(sim.m_after[u][v]) <= 1.0 + 1e-12);
        }
    }
}
