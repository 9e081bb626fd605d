// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#include "elastic/attention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace elastic {

SparsityPattern SparsityPattern::full() {
    return SparsityPattern{};
}

SparsityPattern SparsityPattern::streaming(std::size_t sink, std::size_t window) {
    if (window == 0) throw ValueError("streaming pattern: window must be >= 1");
    SparsityPattern p;
    p.kind = Kind::Streaming;
    p.sink = sink;
    p.window = window;
    return p;
}

SparsityPattern SparsityPattern::block_sparse(std::size_t block_size, double mass_threshold) {
    if (block_size == 0) throw ValueError("block-sparse pattern: block_size must be >= 1");
    if (!(mass_threshold > 0.0 && mass_threshold <= 1.0)) {
        throw ValueError("block-sparse pattern: mass_threshold must be in (0,1]");
    }
    SparsityPattern p;
    p.kind = Kind::BlockSparse;
    p.block_size = block_size;
    p.mass_threshold = mass_threshold;
    return p;
}

double SparsityPattern::rho(std::size_t seq_len) const {
    switch (kind) {
        case Kind::Full:
            return 0.0;
        case Kind::Streaming: {
            if (seq_len == 0) return 0.0;
            double acc = 0.0;
            for (std::size_t i = 0; i < seq_len; ++i) {
                const double n = static_cast<double>(i + 1);
                const double pruned =
                    std::max(0.0, n - static_cast<double>(sink) - static_cast<double>(window));
                acc += pruned / n;
            }
            double r = acc / static_cast<double>(seq_len);
            return std::min(r, std::nexttoward(1.0, 0.0));
        }
        case Kind::BlockSparse:
            throw ValueError("block-sparse rho is content dependent; use mask_rho");
    }
    return 0.0;
}

void AttnMask::validate() const {
    if (allowed.size() != s * s) throw MaskError("mask: size mismatch");
    for (std::size_t i = 0; i < s; ++i) {
        bool any = false;
        for (std::size_t j = 0; j < s; ++j) {
            const bool a = at(i, j);
            if (causal && j > i && a) throw MaskError("mask: causal violation");
            any = any || a;
        }
        if (!any) {
            throw MaskError("mask: query row " + std::to_string(i) + " attends no keys");
        }
    }
}

AttnMask causal_mask(std::size_t s) {
    AttnMask m;
    m.s = s;
    m.causal = true;
    m.allowed.assign(s * s, 0);
    for (std::size_t i = 0; i < s; ++i) {
        for (std::size_t j = 0; j <= i; ++j) m.allowed[i * s + j] = 1;
    }
    return m;
}

AttnMask streaming_mask(std::size_t s, std::size_t sink, std::size_t window) {
    if (window == 0) throw ValueError("streaming_mask: window must be >= 1");
    AttnMask m;
    m.s = s;
    m.causal = true;
    m.allowed.assign(s * s, 0);
    for (std::size_t i = 0; i < s; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            if (j < sink || i - j < window) m.allowed[i * s + j] = 1;
        }
    }
    return m;
}

namespace {

// Causal softmax probabilities of q k^T / sqrt(d), plain arrays.
std::vector<double> causal_softmax_probs(const std::vector<double>& q,
                                         const std::vector<double>& k, std::size_t s,
                                         std::size_t d) {
    std::vector<double> probs(s * s, 0.0);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> row(s);
    for (std::size_t i = 0; i < s; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) acc += q[i * d + c] * k[j * d + c];
            row[j] = acc * inv_sqrt_d;
        }
        double mx = row[0];
        for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
            row[j] = std::exp(row[j] - mx);
            denom += row[j];
        }
        for (std::size_t j = 0; j <= i; ++j) probs[i * s + j] = row[j] / denom;
    }
    return probs;
}

}  // namespace

std::vector<std::uint8_t> block_sparse_selection(const double* q, const double* k, std::size_t s,
                                                 std::size_t d, std::size_t block_size,
                                                 double mass_threshold, std::size_t* nblocks_out) {
    if (block_size == 0) throw ValueError("block_sparse_selection: block_size must be >= 1");
    if (!(mass_threshold > 0.0 && mass_threshold <= 1.0)) {
        throw ValueError("block_sparse_selection: mass_threshold must be in (0,1]");
    }
    const std::size_t nblocks = (s + block_size - 1) / block_size;
    if (nblocks_out) *nblocks_out = nblocks;
    std::vector<double> qv(q, q + s * d), kv(k, k + s * d);
    const auto probs = causal_softmax_probs(qv, kv, s, d);

    std::vector<std::uint8_t> sel(nblocks * nblocks, 0);
    for (std::size_t qb = 0; qb < nblocks; ++qb) {
        const std::size_t r0 = qb * block_size;
        const std::size_t r1 = std::min(s, r0 + block_size);
        // Mean over the block's query rows of the causal probability mass in
        // each key block. Rows sum to 1, so block masses sum to 1 per row.
        std::vector<double> mass(qb + 1, 0.0);
        for (std::size_t i = r0; i < r1; ++i) {
            for (std::size_t j = 0; j <= i; ++j) mass[j / block_size] += probs[i * s + j];
        }
        const double inv_rows = 1.0 / static_cast<double>(r1 - r0);
        for (auto& v : mass) v *= inv_rows;

        std::vector<std::size_t> order(qb + 1);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (mass[a] != mass[b]) return mass[a] > mass[b];
            return a < b;
        });

        std::uint8_t* row = sel.data() + qb * nblocks;
        row[qb] = 1;  // diagonal block: every query keeps at least itself
        double cum = mass[qb];
        for (std::size_t kb : order) {
            if (cum >= mass_threshold) break;
            if (row[kb]) continue;
            row[kb] = 1;
            cum += mass[kb];
        }
    }
    return sel;
}

AttnMask block_sparse_mask(const Tensor& q, const Tensor& k, std::size_t block_size,
                           double mass_threshold) {
    const Shape& qs = q.shape();
    const Shape& ks = k.shape();
    if (qs.size() != 2 || ks.size() != 2 || qs != ks) {
        throw ShapeError("block_sparse_mask: q/k must be equal 2-D shapes, got " + shape_str(qs) +
                         " vs " + shape_str(ks));
    }
    const std::size_t s = qs[0], d = qs[1];
    std::size_t nblocks = 0;
    const auto sel = block_sparse_selection(q.value().data(), k.value().data(), s, d, block_size,
                                            mass_threshold, &nblocks);
    AttnMask m;
    m.s = s;
    m.causal = true;
    m.allowed.assign(s * s, 0);
    for (std::size_t i = 0; i < s; ++i) {
        const std::uint8_t* row = sel.data() + (i / block_size) * nblocks;
        for (std::size_t j = 0; j <= i; ++j) {
            if (row[j / block_size]) m.allowed[i * s + j] = 1;
        }
    }
    return m;
}

AttnMask pattern_mask(const SparsityPattern& p, const Tensor& q, const Tensor& k) {
    const std::size_t s = q.shape()[0];
    switch (p.kind) {
        case SparsityPattern::Kind::Full:
            return causal_mask(s);
        case SparsityPattern::Kind::Streaming:
            return streaming_mask(s, p.sink, p.window);
        case SparsityPattern::Kind::BlockSparse:
            return block_sparse_mask(q, k, p.block_size, p.mass_threshold);
    }
    return causal_mask(s);
}

double mask_rho(const AttnMask& mask) {
    if (mask.s == 0) return 0.0;
    // Row-wise mean of per-query pruning fractions, matching the streaming
    // pattern's closed form exactly.
    double acc = 0.0;
    for (std::size_t i = 0; i < mask.s; ++i) {
        std::size_t pruned = 0;
        for (std::size_t j = 0; j <= i; ++j) {
            if (!mask.at(i, j)) ++pruned;
        }
        acc += static_cast<double>(pruned) / static_cast<double>(i + 1);
    }
    return acc / static_cast<double>(mask.s);
}

namespace {

Tensor scaled_scores(const Tensor& q, const Tensor& k) {
    const Shape& qs = q.shape();
    const Shape& ks = k.shape();
    if (qs.size() != 2 || ks.size() != 2 || qs[1] != ks[1] || qs[0] != ks[0]) {
        throw ShapeError("attention: q/k shape mismatch " + shape_str(qs) + " vs " + shape_str(ks));
    }
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(qs[1]));
    return scale(matmul(q, transpose(k)), inv_sqrt_d);
}

Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const std::vector<std::uint8_t>& fill_mask, const Tensor* score_bias) {
    Tensor scores = scaled_scores(q, k);
    if (score_bias != nullptr) scores = add(scores, *score_bias);
    Tensor masked = masked_fill(scores, fill_mask, kMaskFill);
    Tensor probs = softmax_lastdim(masked);
    return matmul(probs, v);
}

}  // namespace

Tensor full_attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal,
                      const Tensor* score_bias) {
    if (v.shape() != q.shape()) {
        throw ShapeError("attention: v shape mismatch " + shape_str(v.shape()) + " vs " +
                         shape_str(q.shape()));
    }
    const std::size_t s = q.shape()[0];
    std::vector<std::uint8_t> fill(s * s, 0);
    if (causal) {
        for (std::size_t i = 0; i < s; ++i) {
            for (std::size_t j = i + 1; j < s; ++j) fill[i * s + j] = 1;
        }
    }
    return masked_attention(q, k, v, fill, score_bias);
}

Tensor sparse_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttnMask& mask,
                        const Tensor* score_bias) {
    const std::size_t s = q.shape()[0];
    if (mask.s != s) throw MaskError("sparse_attention: mask size mismatch");
    mask.validate();
    std::vector<std::uint8_t> fill(s * s);
    for (std::size_t i = 0; i < s * s; ++i) fill[i] = mask.allowed[i] ? 0 : 1;
    return masked_attention(q, k, v, fill, score_bias);
}

Tensor hybrid_layer(const std::vector<Tensor>& q, const std::vector<Tensor>& k,
                    const std::vector<Tensor>& v, const std::vector<HeadAssignment>& assignments,
                    const SparsityPattern& sa_pattern) {
    const std::size_t heads = q.size();
    if (k.size() != heads || v.size() != heads) {
        throw ValueError("hybrid_layer: per-head q/k/v count mismatch");
    }
    if (assignments.size() != heads) {
        throw ValueError("hybrid_layer: expected " + std::to_string(heads) + " assignments, got " +
                         std::to_string(assignments.size()));
    }
    std::vector<HeadMode> mode(heads);
    std::vector<bool> seen(heads, false);
    for (const auto& a : assignments) {
        if (a.head >= heads) throw ValueError("hybrid_layer: head index out of range");
        if (seen[a.head]) {
            throw ValueError("hybrid_layer: duplicate assignment for head " +
                             std::to_string(a.head));
        }
        seen[a.head] = true;
        mode[a.head] = a.mode;
    }
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        if (mode[h] == HeadMode::FA) {
            outs.push_back(full_attention(q[h], k[h], v[h], /*causal=*/true));
        } else {
            outs.push_back(sparse_attention(q[h], k[h], v[h], pattern_mask(sa_pattern, q[h], k[h])));
        }
    }
    return concat_lastdim(outs);
}

}  // namespace elastic
