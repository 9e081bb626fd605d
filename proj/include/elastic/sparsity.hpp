// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "elastic/attention.hpp"

namespace elastic {

struct SparsityReport {
    double msr = 0.0;
    double esr = 0.0;
    std::vector<double> per_layer_msr;
    std::vector<std::vector<double>> per_head_rho;  // [L][H]
};

// Fraction of heads assigned SA.
double compute_msr_hard(const std::vector<HeadAssignment>& assignments, std::size_t layers,
                        std::size_t heads);
double compute_msr_hard(const std::vector<HeadMode>& modes);

// Mean of the SA column across the given STE outputs ([H,2] each). Forward
// value equals the hard ratio exactly; gradients flow via the soft path.
Tensor compute_msr_soft(const std::vector<Tensor>& ste_outs);

// Mean per-head pruning ratio; FA heads contribute 0, SA heads their
// pattern's rho at seq_len. Patterns: one per (layer*heads + head).
double compute_esr(const std::vector<HeadAssignment>& assignments,
                   const std::vector<SparsityPattern>& patterns, std::size_t layers,
                   std::size_t heads, std::size_t seq_len);
// Same with a single shared SA pattern.
double compute_esr(const std::vector<HeadMode>& modes, const SparsityPattern& sa_pattern,
                   std::size_t seq_len);
// Same from precomputed per-head rho values (for content-dependent patterns).
double compute_esr_from_rho(const std::vector<HeadMode>& modes, const std::vector<double>& rho);

SparsityReport sparsity_report(const std::vector<HeadMode>& modes, std::size_t layers,
                               std::size_t heads, const SparsityPattern& sa_pattern,
                               std::size_t seq_len);

}  // namespace elastic
