// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "elastic/graph.hpp"

namespace elastic {

enum class HeadMode : std::uint8_t { FA = 0, SA = 1 };

struct HeadAssignment {
    std::size_t layer = 0;
    std::size_t head = 0;
    HeadMode mode = HeadMode::FA;
};

// Score value used to disable masked positions before softmax. Large enough
// that exp(fill - max) underflows to exactly 0, small enough to stay finite.
inline constexpr double kMaskFill = -1e30;

struct SparsityPattern {
    enum class Kind : std::uint8_t { Full, Streaming, BlockSparse };
    Kind kind = Kind::Full;
    // Streaming
    std::size_t sink = 0;
    std::size_t window = 0;
    // BlockSparse
    std::size_t block_size = 0;
    double mass_threshold = 1.0;

    static SparsityPattern full();
    static SparsityPattern streaming(std::size_t sink, std::size_t window);
    static SparsityPattern block_sparse(std::size_t block_size, double mass_threshold);

    // Token pruning ratio at a given sequence length. Full -> 0; Streaming ->
    // row-wise average of max(0, i+1-sink-window)/(i+1). BlockSparse pruning
    // is content dependent; use mask_rho on the materialized mask instead.
    double rho(std::size_t seq_len) const;

    bool content_dependent() const { return kind == Kind::BlockSparse; }
};

struct AttnMask {
    std::size_t s = 0;
    bool causal = true;
    std::vector<std::uint8_t> allowed;  // s*s row-major, 1 = may attend

    bool at(std::size_t i, std::size_t j) const { return allowed[i * s + j] != 0; }
    void validate() const;  // causal consistency + every row attends >= 1 key
};

AttnMask causal_mask(std::size_t s);
// Query i attends key j iff j <= i and (j < sink or i - j < window).
AttnMask streaming_mask(std::size_t s, std::size_t sink, std::size_t window);
// Per query block, keeps the smallest set of causal key blocks (diagonal
// always included) whose mean softmax mass reaches mass_threshold, picking
// blocks in decreasing mass order.
AttnMask block_sparse_mask(const Tensor& q, const Tensor& k, std::size_t block_size,
                           double mass_threshold);
AttnMask pattern_mask(const SparsityPattern& p, const Tensor& q, const Tensor& k);

// Pruning ratio measured on the mask itself: 1 - allowed/causal entries.
double mask_rho(const AttnMask& mask);

// Block retention bitmap shared by the mask builder and the dispatch kernel:
// entry [qb * nblocks + kb] is 1 iff query block qb keeps key block kb.
std::vector<std::uint8_t> block_sparse_selection(const double* q, const double* k, std::size_t s,
                                                 std::size_t d, std::size_t block_size,
                                                 double mass_threshold, std::size_t* nblocks_out);

// softmax(q k^T / sqrt(d) [+ score_bias]) v, optionally causal. The bias is
// an optional additive [s,s] term (the backbone feeds relative-position
// biases through it).
Tensor full_attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal,
                      const Tensor* score_bias = nullptr);
// Same, restricted to mask-allowed keys via masked_fill before the softmax.
Tensor sparse_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttnMask& mask,
                        const Tensor* score_bias = nullptr);

// Per-head FA/SA composition for one layer; heads concatenated in head order.
Tensor hybrid_layer(const std::vector<Tensor>& q, const std::vector<Tensor>& k,
                    const std::vector<Tensor>& v, const std::vector<HeadAssignment>& assignments,
                    const SparsityPattern& sa_pattern);

}  // namespace elastic
