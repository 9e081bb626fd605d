// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "elastic/attention.hpp"
#include "elastic/dispatch.hpp"
#include "elastic/rng.hpp"

using namespace elastic;

namespace {

LayerInputs random_inputs(Rng& rng, std::size_t s, std::size_t d, std::size_t heads) {
    LayerInputs in;
    in.s = s;
    in.d = d;
    for (std::size_t h = 0; h < heads; ++h) {
        in.q.push_back(rng.uniform_vec(s * d, -1.5, 1.5));
        in.k.push_back(rng.uniform_vec(s * d, -1.5, 1.5));
        in.v.push_back(rng.uniform_vec(s * d, -1.5, 1.5));
    }
    return in;
}

}  // namespace

TEST_CASE("serial and unified dispatch are bit-identical") {
    Rng rng(21);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t heads = 1 + rng.uniform_int(8);
        const std::size_t s = 8 + rng.uniform_int(25);
        const std::size_t d = 2 + rng.uniform_int(7);
        LayerInputs in = random_inputs(rng, s, d, heads);
        std::vector<HeadMode> modes(heads);
        for (auto& m : modes) m = rng.uniform01() < 0.5 ? HeadMode::SA : HeadMode::FA;
        const SparsityPattern pat = (trial % 3 == 2)
                                        ? SparsityPattern::block_sparse(4, 0.85)
                                        : SparsityPattern::streaming(1, 4);
        auto a = serial_dispatch(in, modes, pat, nullptr);
        auto b = unified_dispatch(in, modes, pat, nullptr);
        CHECK(a == b);
    }
}

TEST_CASE("dispatch matches the graph-built hybrid layer") {
    Rng rng(22);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t heads = 1 + rng.uniform_int(4);
        const std::size_t s = 4 + rng.uniform_int(12);
        const std::size_t d = 3;
        LayerInputs in = random_inputs(rng, s, d, heads);
        std::vector<HeadMode> modes(heads);
        std::vector<HeadAssignment> assignments;
        for (std::size_t h = 0; h < heads; ++h) {
            modes[h] = rng.uniform01() < 0.5 ? HeadMode::SA : HeadMode::FA;
            assignments.push_back({0, h, modes[h]});
        }
        const SparsityPattern pat = SparsityPattern::streaming(1, 3);

        Graph g;
        std::vector<Tensor> q, k, v;
        for (std::size_t h = 0; h < heads; ++h) {
            q.push_back(g.leaf({s, d}, in.q[h]));
            k.push_back(g.leaf({s, d}, in.k[h]));
            v.push_back(g.leaf({s, d}, in.v[h]));
        }
        auto graph_out = hybrid_layer(q, k, v, assignments, pat).value();
        auto kernel_out = unified_dispatch(in, modes, pat, nullptr);
        CHECK(graph_out == kernel_out);  // same arithmetic order by construction
    }
}

TEST_CASE("single-group assignments still work") {
    Rng rng(23);
    const std::size_t heads = 3, s = 12, d = 4;
    LayerInputs in = random_inputs(rng, s, d, heads);
    const SparsityPattern pat = SparsityPattern::streaming(1, 3);

    std::vector<HeadMode> all_sa(heads, HeadMode::SA);  // serial full group is empty
    CHECK(serial_dispatch(in, all_sa, pat, nullptr) == unified_dispatch(in, all_sa, pat, nullptr));
    std::vector<HeadMode> all_fa(heads, HeadMode::FA);
    CHECK(serial_dispatch(in, all_fa, pat, nullptr) == unified_dispatch(in, all_fa, pat, nullptr));
}

TEST_CASE("unified dispatch allocates less than serial") {
    Rng rng(24);
    const SparsityPattern pat = SparsityPattern::streaming(4, 32);
    // mixed heads at moderate lengths, all-SA at the longest: allocation
    // structure is the same, compute stays cheap
    for (std::size_t s : {std::size_t(512), std::size_t(2048), std::size_t(8192)}) {
        const std::size_t heads = 4, d = 16;
        LayerInputs in = random_inputs(rng, s, d, heads);
        std::vector<HeadMode> modes(heads, HeadMode::SA);
        if (s < 8192) {
            modes[1] = HeadMode::FA;
            modes[3] = HeadMode::FA;
        }
        DispatchStats ser, uni;
        auto a = serial_dispatch(in, modes, pat, &ser);
        auto b = unified_dispatch(in, modes, pat, &uni);
        CHECK(a == b);
        CHECK(uni.alloc_count < ser.alloc_count);
        CHECK(uni.alloc_doubles < ser.alloc_doubles);
    }
}
