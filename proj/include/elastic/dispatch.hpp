// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "elastic/attention.hpp"

namespace elastic {

// Forward-only per-layer inputs: one [s x d] matrix per head.
struct LayerInputs {
    std::size_t s = 0;
    std::size_t d = 0;
    std::vector<std::vector<double>> q, k, v;
};

struct DispatchStats {
    std::size_t alloc_count = 0;    // number of buffer allocations
    std::size_t alloc_doubles = 0;  // total doubles allocated
};

// Both dispatchers return the layer output [s x H*d] of the per-head FA/SA
// composition and produce bit-identical results; they differ in data
// movement. The serial path splits heads into a full group and a sparse
// group, copies each group's Q/K/V, computes per group, then scatters back.
// The unified path makes one pass over heads, branching on per-head mode
// metadata and writing straight into the output.
std::vector<double> serial_dispatch(const LayerInputs& in, const std::vector<HeadMode>& modes,
                                    const SparsityPattern& sa_pattern, DispatchStats* stats);
std::vector<double> unified_dispatch(const LayerInputs& in, const std::vector<HeadMode>& modes,
                                     const SparsityPattern& sa_pattern, DispatchStats* stats);

// Single-head masked attention kernel used by both paths. Row-streaming, so
// no s*s score matrix is materialized; arithmetic matches the graph ops
// bit for bit. Reads rows of length d at x + i*in_stride, writes rows at
// out + i*out_stride.
void attn_head_forward(const double* q, const double* k, const double* v, std::size_t s,
                       std::size_t d, std::size_t in_stride, const SparsityPattern& pattern,
                       double* out, std::size_t out_stride, double* score_buf);

}  // namespace elastic
