// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "elastic/tasks.hpp"

namespace elastic {

// Per-head retrieval score: mean attention mass from the final query position
// onto the planted needle tokens, measured under all-FA.
struct HeadScoreTable {
    std::size_t layers = 0;
    std::size_t heads = 0;
    std::vector<double> score;        // [layer*heads + h]
    std::vector<std::size_t> order;   // head indices sorted by descending score
    std::vector<std::size_t> rank;    // rank[i] = position of head i in `order`
};

HeadScoreTable retrieval_score(const Backbone& model, const TaskSpec& needle_spec,
                               std::size_t n_examples, const char* stream = "probe");

struct SparsifyPoint {
    double omega_msr = 0.0;
    std::string task;
    double accuracy = 0.0;
};

// Keeps the floor((1-omega)*L*H) highest-scoring heads on FA, converts the
// rest to the SA pattern, and evaluates every task at each grid point.
std::vector<SparsifyPoint> progressive_sparsify(const Backbone& model,
                                                const HeadScoreTable& table,
                                                const std::vector<double>& msr_grid,
                                                const std::vector<TaskSpec>& tasks,
                                                const SparsityPattern& sa_pattern,
                                                std::size_t n_examples, std::size_t n_edge = 8);

struct HeatmapResult {
    std::size_t layers = 0;
    std::size_t heads = 0;
    std::vector<std::string> tasks;
    std::vector<std::vector<double>> fa_frequency;  // [task][layer*heads + h]
    std::vector<std::size_t> always_fa;             // frequency >= 0.9 across all tasks
    std::vector<std::size_t> always_sa;             // frequency <= 0.1 across all tasks
};

HeatmapResult head_activation_heatmap(const Backbone& model, const RouterStack& router,
                                      const std::vector<TaskSpec>& tasks,
                                      const SparsityPattern& sa_pattern, std::size_t n_edge,
                                      std::size_t n_examples, std::size_t first_index = 0);

// Pairwise conditional rescaling similarity between task representation sets:
// zero-center over the pair's union, rescale by the union's feature-wise RMS,
// then cosine of the task centroids.
double pairwise_similarity(const std::vector<std::vector<double>>& xu,
                           const std::vector<std::vector<double>>& xv, double eps = 1e-8);

struct SimilarityResult {
    std::vector<std::string> tasks;
    std::vector<std::vector<double>> m_before;  // pooled keys, pre task MLP
    std::vector<std::vector<double>> m_after;   // task MLP outputs
    double mean_offdiag_before = 0.0;
    double mean_offdiag_after = 0.0;
};

SimilarityResult task_similarity(const Backbone& model, const RouterStack& router,
                                 const std::vector<TaskSpec>& tasks,
                                 const SparsityPattern& sa_pattern, std::size_t n_edge,
                                 std::size_t n_examples, std::size_t layer = 0);

}  // namespace elastic
