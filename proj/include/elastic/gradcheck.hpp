// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "elastic/graph.hpp"

namespace elastic {

// Builds a scalar loss from freshly created leaves. Called once per
// finite-difference probe with perturbed inputs, so it must be a pure
// function of the leaf values.
using LossBuilder = std::function<Tensor(Graph&, const std::vector<Tensor>& leaves)>;

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool pass = false;
    std::string worst;  // "input#i[j]" of the worst coordinate
};

// Central finite differences (f(x+h) - f(x-h)) / 2h against the analytic
// gradient from Graph::backward. The numeric side only ever evaluates
// forward values, so it is independent of the backward rules it checks.
// `floor` caps the relative-error denominator from below: coordinates whose
// gradient magnitude sits under it are compared at absolute level tol*floor,
// which keeps the check meaningful where finite-difference noise dominates.
GradCheckReport check_gradient(const LossBuilder& build,
                               const std::vector<Shape>& input_shapes,
                               const std::vector<std::vector<double>>& inputs,
                               double tol, double h = 1e-5, double floor = 1e-7);

// Smallest |relu preactivation| in the built graph. Seeds that park a relu
// input within the finite-difference step of its kink get redrawn by callers;
// central differences are invalid across the kink.
double relu_kink_margin(const LossBuilder& build, const std::vector<Shape>& input_shapes,
                        const std::vector<std::vector<double>>& inputs);

struct OpCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double tol = 0.0;
    bool pass = false;
};

// Finite-difference sweep over every differentiable op plus the composite
// paths (attention, router pipeline, training objective). `seeds` random
// instances per entry.
std::vector<OpCheckResult> run_op_gradchecks(std::uint64_t seed, int seeds_per_op);

}  // namespace elastic
