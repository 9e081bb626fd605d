// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#include "elastic/dispatch.hpp"

#include <algorithm>
#include <cmath>

namespace elastic {

namespace {

std::vector<double> counted(std::size_t n, DispatchStats* st) {
    if (st) {
        ++st->alloc_count;
        st->alloc_doubles += n;
    }
    return std::vector<double>(n);
}

void validate(const LayerInputs& in, const std::vector<HeadMode>& modes) {
    const std::size_t heads = in.q.size();
    if (heads == 0) throw ValueError("dispatch: no heads");
    if (in.k.size() != heads || in.v.size() != heads || modes.size() != heads) {
        throw ValueError("dispatch: per-head input/mode count mismatch");
    }
    for (std::size_t h = 0; h < heads; ++h) {
        if (in.q[h].size() != in.s * in.d || in.k[h].size() != in.s * in.d ||
            in.v[h].size() != in.s * in.d) {
            throw ShapeError("dispatch: head " + std::to_string(h) + " buffer size mismatch");
        }
    }
}

}  // namespace

void attn_head_forward(const double* q, const double* k, const double* v, std::size_t s,
                       std::size_t d, std::size_t in_stride, const SparsityPattern& pattern,
                       double* out, std::size_t out_stride, double* score_buf) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    std::vector<std::uint8_t> block_sel;
    std::size_t nblocks = 0;
    if (pattern.kind == SparsityPattern::Kind::BlockSparse) {
        // Selection wants contiguous rows; repack if strided.
        if (in_stride == d) {
            block_sel = block_sparse_selection(q, k, s, d, pattern.block_size,
                                               pattern.mass_threshold, &nblocks);
        } else {
            std::vector<double> qc(s * d), kc(s * d);
            for (std::size_t i = 0; i < s; ++i) {
                std::copy_n(q + i * in_stride, d, qc.data() + i * d);
                std::copy_n(k + i * in_stride, d, kc.data() + i * d);
            }
            block_sel = block_sparse_selection(qc.data(), kc.data(), s, d, pattern.block_size,
                                               pattern.mass_threshold, &nblocks);
        }
    }
    auto allowed = [&](std::size_t i, std::size_t j) -> bool {
        switch (pattern.kind) {
            case SparsityPattern::Kind::Full:
                return true;
            case SparsityPattern::Kind::Streaming:
                return j < pattern.sink || i - j < pattern.window;
            case SparsityPattern::Kind::BlockSparse:
                return block_sel[(i / pattern.block_size) * nblocks + j / pattern.block_size] != 0;
        }
        return true;
    };

    for (std::size_t i = 0; i < s; ++i) {
        // Scores of allowed keys, visited in ascending j as the dense path
        // would; skipped keys contribute exact zeros there, so results match.
        double mx = -HUGE_VAL;
        for (std::size_t j = 0; j <= i; ++j) {
            if (!allowed(i, j)) continue;
            double acc = 0.0;
            const double* qrow = q + i * in_stride;
            const double* krow = k + j * in_stride;
            for (std::size_t c = 0; c < d; ++c) acc += qrow[c] * krow[c];
            score_buf[j] = acc * inv_sqrt_d;
            mx = std::max(mx, score_buf[j]);
        }
        double denom = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
            if (!allowed(i, j)) continue;
            score_buf[j] = std::exp(score_buf[j] - mx);
            denom += score_buf[j];
        }
        const double inv = 1.0 / denom;
        double* orow = out + i * out_stride;
        for (std::size_t c = 0; c < d; ++c) orow[c] = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
            if (!allowed(i, j)) continue;
            const double p = score_buf[j] * inv;
            const double* vrow = v + j * in_stride;
            for (std::size_t c = 0; c < d; ++c) orow[c] += p * vrow[c];
        }
    }
}

std::vector<double> unified_dispatch(const LayerInputs& in, const std::vector<HeadMode>& modes,
                                     const SparsityPattern& sa_pattern, DispatchStats* stats) {
    validate(in, modes);
    const std::size_t heads = in.q.size();
    const std::size_t row = heads * in.d;
    std::vector<double> out = counted(in.s * row, stats);
    static const SparsityPattern kFull = SparsityPattern::full();
    // One pass over heads; the mode metadata decides the branch per head.
    for (std::size_t h = 0; h < heads; ++h) {
        std::vector<double> scores = counted(in.s, stats);
        const SparsityPattern& p = (modes[h] == HeadMode::FA) ? kFull : sa_pattern;
        attn_head_forward(in.q[h].data(), in.k[h].data(), in.v[h].data(), in.s, in.d, in.d, p,
                          out.data() + h * in.d, row, scores.data());
    }
    return out;
}

std::vector<double> serial_dispatch(const LayerInputs& in, const std::vector<HeadMode>& modes,
                                    const SparsityPattern& sa_pattern, DispatchStats* stats) {
    validate(in, modes);
    const std::size_t heads = in.q.size();
    const std::size_t row = heads * in.d;
    std::vector<double> out = counted(in.s * row, stats);

    std::vector<std::size_t> group[2];  // [0]=full, [1]=sparse
    for (std::size_t h = 0; h < heads; ++h) {
        group[modes[h] == HeadMode::FA ? 0 : 1].push_back(h);
    }
    static const SparsityPattern kFull = SparsityPattern::full();

    for (int gi = 0; gi < 2; ++gi) {
        const auto& idx = group[gi];
        if (idx.empty()) continue;
        const std::size_t g = idx.size();
        const std::size_t grow = g * in.d;
        // Materialize the group's inputs (the per-group copies are the cost
        // this path pays), compute into a group buffer, then scatter back.
        std::vector<double> qg = counted(in.s * grow, stats);
        std::vector<double> kg = counted(in.s * grow, stats);
        std::vector<double> vg = counted(in.s * grow, stats);
        for (std::size_t t = 0; t < g; ++t) {
            const auto& qh = in.q[idx[t]];
            const auto& kh = in.k[idx[t]];
            const auto& vh = in.v[idx[t]];
            for (std::size_t i = 0; i < in.s; ++i) {
                std::copy_n(qh.data() + i * in.d, in.d, qg.data() + i * grow + t * in.d);
                std::copy_n(kh.data() + i * in.d, in.d, kg.data() + i * grow + t * in.d);
                std::copy_n(vh.data() + i * in.d, in.d, vg.data() + i * grow + t * in.d);
            }
        }
        std::vector<double> og = counted(in.s * grow, stats);
        const SparsityPattern& p = (gi == 0) ? kFull : sa_pattern;
        for (std::size_t t = 0; t < g; ++t) {
            std::vector<double> scores = counted(in.s, stats);
            attn_head_forward(qg.data() + t * in.d, kg.data() + t * in.d, vg.data() + t * in.d,
                              in.s, in.d, grow, p, og.data() + t * in.d, grow, scores.data());
        }
        for (std::size_t t = 0; t < g; ++t) {
            const std::size_t h = idx[t];
            for (std::size_t i = 0; i < in.s; ++i) {
                std::copy_n(og.data() + i * grow + t * in.d, in.d, out.data() + i * row + h * in.d);
            }
        }
    }
    return out;
}

}  // namespace elastic
