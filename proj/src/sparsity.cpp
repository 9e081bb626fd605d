// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#include "elastic/sparsity.hpp"

namespace elastic {

namespace {

std::vector<HeadMode> to_modes(const std::vector<HeadAssignment>& assignments, std::size_t layers,
                               std::size_t heads) {
    if (assignments.size() != layers * heads) {
        throw ValueError("expected " + std::to_string(layers * heads) + " assignments, got " +
                         std::to_string(assignments.size()));
    }
    std::vector<HeadMode> modes(layers * heads);
    std::vector<bool> seen(layers * heads, false);
    for (const auto& a : assignments) {
        if (a.layer >= layers || a.head >= heads) {
            throw ValueError("assignment (" + std::to_string(a.layer) + "," +
                             std::to_string(a.head) + ") out of range");
        }
        const std::size_t i = a.layer * heads + a.head;
        if (seen[i]) throw ValueError("duplicate assignment for head " + std::to_string(i));
        seen[i] = true;
        modes[i] = a.mode;
    }
    return modes;
}

}  // namespace

double compute_msr_hard(const std::vector<HeadMode>& modes) {
    if (modes.empty()) throw ValueError("msr: no heads");
    double count = 0.0;
    for (HeadMode m : modes) {
        if (m == HeadMode::SA) count += 1.0;
    }
    // Multiply by the reciprocal so the value matches compute_msr_soft bit
    // for bit (it scales a sum the same way).
    return count * (1.0 / static_cast<double>(modes.size()));
}

double compute_msr_hard(const std::vector<HeadAssignment>& assignments, std::size_t layers,
                        std::size_t heads) {
    return compute_msr_hard(to_modes(assignments, layers, heads));
}

Tensor compute_msr_soft(const std::vector<Tensor>& ste_outs) {
    if (ste_outs.empty()) throw ValueError("msr_soft: no routing outputs");
    std::size_t total_heads = 0;
    Tensor acc;
    for (const auto& r : ste_outs) {
        const Shape& s = r.shape();
        if (s.size() != 2 || s[1] != 2) {
            throw ShapeError("msr_soft: expected [H,2] routing outputs, got " + shape_str(s));
        }
        total_heads += s[0];
        Tensor col = sum(slice_cols(r, 1, 1));
        acc = acc.defined() ? add(acc, col) : col;
    }
    return scale(acc, 1.0 / static_cast<double>(total_heads));
}

double compute_esr(const std::vector<HeadAssignment>& assignments,
                   const std::vector<SparsityPattern>& patterns, std::size_t layers,
                   std::size_t heads, std::size_t seq_len) {
    const auto modes = to_modes(assignments, layers, heads);
    if (patterns.size() != modes.size()) {
        throw ValueError("esr: need one pattern per head");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < modes.size(); ++i) {
        if (modes[i] == HeadMode::SA) acc += patterns[i].rho(seq_len);
    }
    return acc / static_cast<double>(modes.size());
}

double compute_esr(const std::vector<HeadMode>& modes, const SparsityPattern& sa_pattern,
                   std::size_t seq_len) {
    if (modes.empty()) throw ValueError("esr: no heads");
    const double rho = sa_pattern.rho(seq_len);
    double acc = 0.0;
    for (HeadMode m : modes) {
        if (m == HeadMode::SA) acc += rho;
    }
    return acc / static_cast<double>(modes.size());
}

double compute_esr_from_rho(const std::vector<HeadMode>& modes, const std::vector<double>& rho) {
    if (modes.size() != rho.size()) throw ValueError("esr: rho count mismatch");
    if (modes.empty()) throw ValueError("esr: no heads");
    double acc = 0.0;
    for (std::size_t i = 0; i < modes.size(); ++i) {
        if (modes[i] == HeadMode::SA) acc += rho[i];
    }
    return acc / static_cast<double>(modes.size());
}

SparsityReport sparsity_report(const std::vector<HeadMode>& modes, std::size_t layers,
                               std::size_t heads, const SparsityPattern& sa_pattern,
                               std::size_t seq_len) {
    if (modes.size() != layers * heads) throw ValueError("report: mode count mismatch");
    SparsityReport rep;
    rep.msr = compute_msr_hard(modes);
    rep.esr = compute_esr(modes, sa_pattern, seq_len);
    const double rho = sa_pattern.rho(seq_len);
    rep.per_layer_msr.resize(layers, 0.0);
    rep.per_head_rho.assign(layers, std::vector<double>(heads, 0.0));
    for (std::size_t l = 0; l < layers; ++l) {
        double count = 0.0;
        for (std::size_t h = 0; h < heads; ++h) {
            if (modes[l * heads + h] == HeadMode::SA) {
                count += 1.0;
                rep.per_head_rho[l][h] = rho;
            }
        }
        rep.per_layer_msr[l] = count / static_cast<double>(heads);
    }
    return rep;
}

}  // namespace elastic
