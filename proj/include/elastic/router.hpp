// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "elastic/attention.hpp"
#include "elastic/params.hpp"
#include "elastic/rng.hpp"

namespace elastic {

// tau(p) = max(tau_min, tau_init * exp(-decay * p)), p = normalized training
// progress in [0,1].
struct AnnealSchedule {
    double tau_init = 1.0;
    double tau_min = 0.1;
    double decay = 0.6;

    double tau(double progress) const;
};

struct RouterConfig {
    std::size_t heads = 4;
    std::size_t head_dim = 16;
    std::size_t hidden_mult = 4;  // MLP hidden width as a multiple of head_dim
    std::size_t n_edge = 8;       // boundary pooling width
};

// One router per layer: task MLP (d' -> hidden -> d') feeding a router MLP
// (d' -> hidden -> d' -> 2). Each row of the pooled [H, d'] input yields the
// two mode logits of one head.
struct RouterStack {
    RouterConfig cfg;
    std::size_t layers = 0;
    ParamStore params;

    static RouterStack init(std::size_t layers, const RouterConfig& cfg, std::uint64_t seed);
    std::size_t params_per_layer() const;
};

struct RouterLayerTensors {
    Tensor tw1, tb1, tw2, tb2;        // task MLP
    Tensor rw1, rb1, rw2, rb2, rw3, rb3;  // router MLP
};

RouterLayerTensors router_layer_tensors(const BoundParams& bp, std::size_t layer);

// Deduplicated union of the first and last min(n_edge, s) positions.
std::vector<std::size_t> boundary_indices(std::size_t s, std::size_t n_edge);

// Mean of the boundary rows of each head's [s, d'] keys -> [H, d'].
Tensor boundary_pool(const std::vector<Tensor>& per_head_k, std::size_t n_edge);

Tensor task_features(const RouterLayerTensors& p, const Tensor& pooled);  // [H, d']
Tensor router_logits(const RouterLayerTensors& p, const Tensor& pooled);  // [H, 2]

// g = -log(-log(u + eps) + eps), u in (0,1).
double gumbel_from_uniform(double u, double eps = 1e-10);
std::vector<double> sample_gumbel(Rng& rng, std::size_t n, double eps = 1e-10);

// Binary Gumbel-Sigmoid on the per-head logit difference, shaped as a
// two-column row distribution [1-p, p]. noise holds one (g0, g1) pair per
// head, laid out [h*2 + c].
Tensor gumbel_soft_route(const Tensor& z, const std::vector<double>& noise, double tau);

struct HardenResult {
    Tensor ste;                   // one-hot forward, soft-path backward
    std::vector<HeadMode> hard;   // 1 = SA column won; ties resolve to FA
};
HardenResult ste_harden(const Tensor& r_soft);

struct RoutingDecision {
    Tensor soft;    // [H,2]
    Tensor ste;     // [H,2]
    Tensor pooled;  // [H,d'] boundary-pooled keys (pre task MLP)
    Tensor task_rep;  // [H,d'] task MLP output
    std::vector<HeadMode> hard;
    std::vector<double> noise;  // empty when routed without noise
    double tau = 1.0;
};

// Training-time routing: pool -> logits -> Gumbel noise -> soft -> STE.
RoutingDecision route_train(const RouterLayerTensors& p, const std::vector<Tensor>& per_head_k,
                            std::size_t n_edge, double tau, Rng& noise_rng);

// Inference routing is noise-free: hard mode = argmax of the raw logits.
RoutingDecision route_infer(const RouterLayerTensors& p, const std::vector<Tensor>& per_head_k,
                            std::size_t n_edge);

}  // namespace elastic
