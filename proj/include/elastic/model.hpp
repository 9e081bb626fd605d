// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "elastic/attention.hpp"
#include "elastic/params.hpp"
#include "elastic/router.hpp"

namespace elastic {

struct ModelDims {
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t head_dim = 16;
    std::size_t vocab = 64;
    std::size_t max_seq = 256;
    std::size_t ffn_hidden = 128;

    std::size_t d_model() const { return heads * head_dim; }
};

// Decoder-only toy transformer: token + position embeddings, per layer
// (attention + residual, ReLU FFN + residual), untied LM head. One query
// head per KV head.
struct Backbone {
    ModelDims dims;
    ParamStore params;

    static Backbone init(const ModelDims& dims, std::uint64_t seed);
};

// Per-layer hidden-state hook; values are copies of node values.
struct ForwardCaptures {
    bool want_attn_probs = false;
    std::vector<std::vector<double>> attn_probs;  // [layer*heads + h] -> s*s
};

// -- graph-building forward passes (caller owns the Graph) --

// Fixed per-head modes (layers*heads entries). Used for pretraining (all FA),
// forced ablations and progressive sparsification.
Tensor forward_fixed(Graph& g, const BoundParams& bb, const ModelDims& dims,
                     const std::vector<std::size_t>& tokens, const std::vector<HeadMode>& modes,
                     const SparsityPattern& sa_pattern, ForwardCaptures* cap = nullptr);

// Router-driven training forward: each head's output is the STE-weighted mix
// of its full and sparse branches, so the LM loss reaches the router. The
// Soft mix (weights = r_soft instead of the hardened rows) is the dual graph
// used by gradient checks.
enum class RouteMix : std::uint8_t { Ste, Soft };

struct RoutedForward {
    Tensor logits;
    std::vector<RoutingDecision> decisions;  // per layer
};
RoutedForward forward_routed_train(Graph& g, const BoundParams& bb, const BoundParams& rt,
                                   const ModelDims& dims, const std::vector<std::size_t>& tokens,
                                   const SparsityPattern& sa_pattern, std::size_t n_edge,
                                   double tau, Rng& noise_rng, RouteMix mix = RouteMix::Ste);

// Router-driven inference forward: computes only each head's assigned branch.
RoutedForward forward_routed_infer(Graph& g, const BoundParams& bb, const BoundParams& rt,
                                   const ModelDims& dims, const std::vector<std::size_t>& tokens,
                                   const SparsityPattern& sa_pattern, std::size_t n_edge,
                                   ForwardCaptures* cap = nullptr);

// -- convenience eval wrapper (owns its graph) --

struct EvalRouting {
    const RouterStack* router = nullptr;      // when set, per-example routing
    std::vector<HeadMode> fixed_modes;        // else fixed assignment
    SparsityPattern sa_pattern;
    std::size_t n_edge = 8;
};

struct EvalResult {
    std::vector<double> logits;                   // s*vocab
    std::vector<HeadMode> modes;                  // layers*heads actually used
    std::vector<std::vector<double>> attn_probs;  // when requested
    std::vector<std::vector<double>> pooled;      // per layer, H*d' (router runs only)
    std::vector<std::vector<double>> task_rep;    // per layer, H*d'
};

EvalResult eval_forward(const Backbone& model, const std::vector<std::size_t>& tokens,
                        const EvalRouting& routing, bool capture_probs = false);

}  // namespace elastic
