// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#include "elastic/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace elastic {

HeadScoreTable retrieval_score(const Backbone& model, const TaskSpec& needle_spec,
                               std::size_t n_examples, const char* stream) {
    if (needle_spec.kind != TaskSpec::Kind::NeedleRetrieval) {
        throw ValueError("retrieval_score: needs a needle task spec");
    }
    if (n_examples == 0) throw ValueError("retrieval_score: no probe examples");
    const std::size_t L = model.dims.layers, H = model.dims.heads;
    HeadScoreTable table;
    table.layers = L;
    table.heads = H;
    table.score.assign(L * H, 0.0);

    EvalRouting routing;
    routing.fixed_modes.assign(L * H, HeadMode::FA);
    routing.sa_pattern = SparsityPattern::full();

    for (std::size_t e = 0; e < n_examples; ++e) {
        Example ex = gen_example(needle_spec, stream, e);
        if (ex.needle_pos.empty()) throw ValueError("retrieval_score: example has no needle set");
        EvalResult res = eval_forward(model, ex.tokens, routing, /*capture_probs=*/true);
        const std::size_t s = ex.tokens.size();
        for (std::size_t i = 0; i < L * H; ++i) {
            const auto& probs = res.attn_probs[i];
            double mass = 0.0;
            for (std::size_t j : ex.needle_pos) mass += probs[(s - 1) * s + j];
            table.score[i] += mass;
        }
    }
    for (auto& v : table.score) v /= static_cast<double>(n_examples);

    table.order.resize(L * H);
    std::iota(table.order.begin(), table.order.end(), 0);
    std::sort(table.order.begin(), table.order.end(), [&](std::size_t a, std::size_t b) {
        if (table.score[a] != table.score[b]) return table.score[a] > table.score[b];
        return a < b;
    });
    table.rank.resize(L * H);
    for (std::size_t r = 0; r < table.order.size(); ++r) table.rank[table.order[r]] = r;
    return table;
}

std::vector<SparsifyPoint> progressive_sparsify(const Backbone& model,
                                                const HeadScoreTable& table,
                                                const std::vector<double>& msr_grid,
                                                const std::vector<TaskSpec>& tasks,
                                                const SparsityPattern& sa_pattern,
                                                std::size_t n_examples, std::size_t n_edge) {
    const std::size_t total = table.layers * table.heads;
    if (table.order.size() != total) throw ValueError("progressive_sparsify: bad score table");
    std::vector<SparsifyPoint> out;
    for (double omega : msr_grid) {
        if (!(omega >= 0.0 && omega <= 1.0)) {
            throw ValueError("progressive_sparsify: omega outside [0,1]");
        }
        const std::size_t keep_fa =
            static_cast<std::size_t>(std::floor((1.0 - omega) * static_cast<double>(total)));
        EvalRouting routing;
        routing.fixed_modes.assign(total, HeadMode::SA);
        for (std::size_t r = 0; r < keep_fa && r < total; ++r) {
            routing.fixed_modes[table.order[r]] = HeadMode::FA;
        }
        routing.sa_pattern = sa_pattern;
        routing.n_edge = n_edge;
        for (const auto& spec : tasks) {
            SparsifyPoint p;
            p.omega_msr = omega;
            p.task = spec.name;
            p.accuracy = task_accuracy(model, spec, routing, n_examples);
            out.push_back(std::move(p));
        }
    }
    return out;
}

HeatmapResult head_activation_heatmap(const Backbone& model, const RouterStack& router,
                                      const std::vector<TaskSpec>& tasks,
                                      const SparsityPattern& sa_pattern, std::size_t n_edge,
                                      std::size_t n_examples, std::size_t first_index) {
    if (n_examples == 0) throw ValueError("heatmap: no examples");
    const std::size_t total = model.dims.layers * model.dims.heads;
    HeatmapResult res;
    res.layers = model.dims.layers;
    res.heads = model.dims.heads;

    EvalRouting routing;
    routing.router = &router;
    routing.sa_pattern = sa_pattern;
    routing.n_edge = n_edge;

    for (const auto& spec : tasks) {
        std::vector<double> freq(total, 0.0);
        for (std::size_t e = 0; e < n_examples; ++e) {
            Example ex = gen_example(spec, "eval", first_index + e);
            EvalResult r = eval_forward(model, ex.tokens, routing);
            for (std::size_t i = 0; i < total; ++i) {
                if (r.modes[i] == HeadMode::FA) freq[i] += 1.0;
            }
        }
        for (auto& f : freq) f /= static_cast<double>(n_examples);
        res.tasks.push_back(spec.name);
        res.fa_frequency.push_back(std::move(freq));
    }

    for (std::size_t i = 0; i < total; ++i) {
        bool fa = true, sa = true;
        for (const auto& freq : res.fa_frequency) {
            fa = fa && freq[i] >= 0.9;
            sa = sa && freq[i] <= 0.1;
        }
        if (fa) res.always_fa.push_back(i);
        if (sa) res.always_sa.push_back(i);
    }
    return res;
}

double pairwise_similarity(const std::vector<std::vector<double>>& xu,
                           const std::vector<std::vector<double>>& xv, double eps) {
    if (xu.size() < 1 || xv.size() < 1) throw ValueError("similarity: empty representation set");
    const std::size_t dim = xu[0].size();
    for (const auto& x : xu) {
        if (x.size() != dim) throw ValueError("similarity: inconsistent dimensions");
    }
    for (const auto& x : xv) {
        if (x.size() != dim) throw ValueError("similarity: inconsistent dimensions");
    }
    const double n_union = static_cast<double>(xu.size() + xv.size());

    // Zero-center over the union, then feature-wise RMS of the union.
    std::vector<double> mean(dim, 0.0);
    for (const auto& x : xu) {
        for (std::size_t j = 0; j < dim; ++j) mean[j] += x[j];
    }
    for (const auto& x : xv) {
        for (std::size_t j = 0; j < dim; ++j) mean[j] += x[j];
    }
    for (auto& m : mean) m /= n_union;

    std::vector<double> sigma(dim, 0.0);
    auto accum_sq = [&](const std::vector<double>& x) {
        for (std::size_t j = 0; j < dim; ++j) {
            const double c = x[j] - mean[j];
            sigma[j] += c * c;
        }
    };
    for (const auto& x : xu) accum_sq(x);
    for (const auto& x : xv) accum_sq(x);
    for (auto& s : sigma) s = std::sqrt(s / n_union + eps);

    // The mean enters only through sigma (making it a true deviation); the
    // projection rescales the raw vectors, so paired centroids are not forced
    // antipodal by the centering.
    auto centroid = [&](const std::vector<std::vector<double>>& xs) {
        std::vector<double> c(dim, 0.0);
        for (const auto& x : xs) {
            for (std::size_t j = 0; j < dim; ++j) c[j] += x[j] / sigma[j];
        }
        for (auto& v : c) v /= static_cast<double>(xs.size());
        return c;
    };
    const auto cu = centroid(xu);
    const auto cv = centroid(xv);
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
        dot += cu[j] * cv[j];
        nu += cu[j] * cu[j];
        nv += cv[j] * cv[j];
    }
    const double denom = std::sqrt(nu) * std::sqrt(nv);
    return denom == 0.0 ? 0.0 : dot / denom;
}

SimilarityResult task_similarity(const Backbone& model, const RouterStack& router,
                                 const std::vector<TaskSpec>& tasks,
                                 const SparsityPattern& sa_pattern, std::size_t n_edge,
                                 std::size_t n_examples, std::size_t layer) {
    if (tasks.size() < 2) throw ValueError("task_similarity: need >= 2 tasks");
    if (n_examples < 2) throw ValueError("task_similarity: need >= 2 samples per task");
    if (layer >= model.dims.layers) throw ValueError("task_similarity: layer out of range");

    EvalRouting routing;
    routing.router = &router;
    routing.sa_pattern = sa_pattern;
    routing.n_edge = n_edge;

    const std::size_t t = tasks.size();
    std::vector<std::vector<std::vector<double>>> before(t), after(t);
    for (std::size_t ti = 0; ti < t; ++ti) {
        for (std::size_t e = 0; e < n_examples; ++e) {
            Example ex = gen_example(tasks[ti], "eval", e);
            EvalResult r = eval_forward(model, ex.tokens, routing);
            before[ti].push_back(r.pooled[layer]);
            after[ti].push_back(r.task_rep[layer]);
        }
    }

    SimilarityResult res;
    for (const auto& s : tasks) res.tasks.push_back(s.name);
    res.m_before.assign(t, std::vector<double>(t, 1.0));
    res.m_after.assign(t, std::vector<double>(t, 1.0));
    double acc_b = 0.0, acc_a = 0.0;
    std::size_t pairs = 0;
    for (std::size_t u = 0; u < t; ++u) {
        for (std::size_t v = u + 1; v < t; ++v) {
            const double mb = pairwise_similarity(before[u], before[v]);
            const double ma = pairwise_similarity(after[u], after[v]);
            res.m_before[u][v] = res.m_before[v][u] = mb;
            res.m_after[u][v] = res.m_after[v][u] = ma;
            acc_b += std::abs(mb);
            acc_a += std::abs(ma);
            ++pairs;
        }
    }
    res.mean_offdiag_before = acc_b / static_cast<double>(pairs);
    res.mean_offdiag_after = acc_a / static_cast<double>(pairs);
    return res;
}

}  // namespace elastic
