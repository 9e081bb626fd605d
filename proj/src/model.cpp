// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#include "elastic/model.hpp"

#include <cmath>

namespace elastic {

namespace {

std::vector<double> fan_in_uniform(Rng& rng, std::size_t fan_in, std::size_t count) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return rng.uniform_vec(count, -bound, bound);
}

std::string lp(std::size_t layer) { return "l" + std::to_string(layer) + "."; }

struct AttnBranches {
    Tensor full;
    Tensor sparse;
};

// Relative-position score bias matrix: B[i][j] = bias[i-j] on the causal
// triangle (later positions are masked out downstream anyway).
Tensor rel_bias_matrix(const Tensor& bias_vec, std::size_t s) {
    std::vector<std::size_t> rel(s * s, 0);
    for (std::size_t i = 0; i < s; ++i) {
        for (std::size_t j = 0; j <= i; ++j) rel[i * s + j] = i - j;
    }
    return reshape(gather_rows(bias_vec, rel), {s, s});
}

// Shared layer walk; `head_fn` produces each head's output tensor.
template <class HeadFn, class PreLayerFn>
Tensor transformer_body(Graph& g, const BoundParams& bb, const ModelDims& dims,
                        const std::vector<std::size_t>& tokens, PreLayerFn pre_layer,
                        HeadFn head_fn) {
    const std::size_t s = tokens.size();
    if (s == 0) throw ValueError("forward: empty token sequence");
    if (s > dims.max_seq) {
        throw ValueError("forward: sequence length " + std::to_string(s) + " exceeds max_seq " +
                         std::to_string(dims.max_seq));
    }
    for (std::size_t t : tokens) {
        if (t >= dims.vocab) throw ValueError("forward: token id out of range");
    }
    std::vector<std::size_t> pos(s);
    for (std::size_t i = 0; i < s; ++i) pos[i] = i;

    Tensor x = add(gather_rows(bb.get("tok_emb"), tokens), gather_rows(bb.get("pos_emb"), pos));
    const std::size_t dh = dims.head_dim;
    for (std::size_t l = 0; l < dims.layers; ++l) {
        Tensor q = matmul(x, bb.get(lp(l) + "wq"));
        Tensor k = matmul(x, bb.get(lp(l) + "wk"));
        Tensor v = matmul(x, bb.get(lp(l) + "wv"));
        std::vector<Tensor> qh(dims.heads), kh(dims.heads), vh(dims.heads);
        for (std::size_t h = 0; h < dims.heads; ++h) {
            qh[h] = slice_cols(q, h * dh, dh);
            kh[h] = slice_cols(k, h * dh, dh);
            vh[h] = slice_cols(v, h * dh, dh);
        }
        pre_layer(l, kh);
        std::vector<Tensor> outs(dims.heads);
        for (std::size_t h = 0; h < dims.heads; ++h) {
            Tensor bias = rel_bias_matrix(
                bb.get(lp(l) + "h" + std::to_string(h) + ".rel_bias"), s);
            outs[h] = head_fn(l, h, qh[h], kh[h], vh[h], bias);
        }
        Tensor attn = concat_lastdim(outs);
        x = add(x, matmul(attn, bb.get(lp(l) + "wo")));
        Tensor h1 = relu(add(matmul(x, bb.get(lp(l) + "ffn.w1")), bb.get(lp(l) + "ffn.b1")));
        x = add(x, add(matmul(h1, bb.get(lp(l) + "ffn.w2")), bb.get(lp(l) + "ffn.b2")));
    }
    (void)g;
    return matmul(x, bb.get("lm_head"));
}

struct AttnWithProbs {
    Tensor out;
    Tensor probs;
};

AttnWithProbs attention_with_probs(const Tensor& q, const Tensor& k, const Tensor& v,
                                   const AttnMask& mask, const Tensor& score_bias) {
    const std::size_t s = q.shape()[0];
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.shape()[1]));
    std::vector<std::uint8_t> fill(s * s);
    for (std::size_t i = 0; i < s * s; ++i) fill[i] = mask.allowed[i] ? 0 : 1;
    Tensor scores = add(scale(matmul(q, transpose(k)), inv_sqrt_d), score_bias);
    Tensor probs = softmax_lastdim(masked_fill(scores, fill, kMaskFill));
    return {matmul(probs, v), probs};
}

}  // namespace

Backbone Backbone::init(const ModelDims& dims, std::uint64_t seed) {
    if (dims.layers == 0 || dims.heads == 0 || dims.head_dim == 0 || dims.vocab == 0) {
        throw ValueError("model dims must be positive");
    }
    Backbone m;
    m.dims = dims;
    const std::size_t dm = dims.d_model();
    Rng rng(derive_seed(seed, "backbone"));
    m.params.add("tok_emb", {dims.vocab, dm}, fan_in_uniform(rng, dm, dims.vocab * dm));
    m.params.add("pos_emb", {dims.max_seq, dm}, fan_in_uniform(rng, dm, dims.max_seq * dm));
    for (std::size_t l = 0; l < dims.layers; ++l) {
        for (const char* w : {"wq", "wk", "wv", "wo"}) {
            m.params.add(lp(l) + w, {dm, dm}, fan_in_uniform(rng, dm, dm * dm));
        }
        for (std::size_t h = 0; h < dims.heads; ++h) {
            // learned relative-position score bias, zero at init
            m.params.add(lp(l) + "h" + std::to_string(h) + ".rel_bias", {dims.max_seq, 1},
                         std::vector<double>(dims.max_seq, 0.0));
        }
        m.params.add(lp(l) + "ffn.w1", {dm, dims.ffn_hidden},
                     fan_in_uniform(rng, dm, dm * dims.ffn_hidden));
        m.params.add(lp(l) + "ffn.b1", {dims.ffn_hidden},
                     std::vector<double>(dims.ffn_hidden, 0.0));
        m.params.add(lp(l) + "ffn.w2", {dims.ffn_hidden, dm},
                     fan_in_uniform(rng, dims.ffn_hidden, dims.ffn_hidden * dm));
        m.params.add(lp(l) + "ffn.b2", {dm}, std::vector<double>(dm, 0.0));
    }
    m.params.add("lm_head", {dm, dims.vocab}, fan_in_uniform(rng, dm, dm * dims.vocab));
    return m;
}

Tensor forward_fixed(Graph& g, const BoundParams& bb, const ModelDims& dims,
                     const std::vector<std::size_t>& tokens, const std::vector<HeadMode>& modes,
                     const SparsityPattern& sa_pattern, ForwardCaptures* cap) {
    if (modes.size() != dims.layers * dims.heads) {
        throw ValueError("forward_fixed: expected " + std::to_string(dims.layers * dims.heads) +
                         " head modes, got " + std::to_string(modes.size()));
    }
    return transformer_body(
        g, bb, dims, tokens, [](std::size_t, const std::vector<Tensor>&) {},
        [&](std::size_t l, std::size_t h, const Tensor& q, const Tensor& k, const Tensor& v,
            const Tensor& bias) {
            const HeadMode mode = modes[l * dims.heads + h];
            const std::size_t s = q.shape()[0];
            AttnMask mask = (mode == HeadMode::FA) ? causal_mask(s) : pattern_mask(sa_pattern, q, k);
            auto res = attention_with_probs(q, k, v, mask, bias);
            if (cap && cap->want_attn_probs) {
                cap->attn_probs.resize(dims.layers * dims.heads);
                cap->attn_probs[l * dims.heads + h] = res.probs.value();
            }
            return res.out;
        });
}

RoutedForward forward_routed_train(Graph& g, const BoundParams& bb, const BoundParams& rt,
                                   const ModelDims& dims, const std::vector<std::size_t>& tokens,
                                   const SparsityPattern& sa_pattern, std::size_t n_edge,
                                   double tau, Rng& noise_rng, RouteMix mix) {
    RoutedForward rf;
    rf.decisions.resize(dims.layers);
    rf.logits = transformer_body(
        g, bb, dims, tokens,
        [&](std::size_t l, const std::vector<Tensor>& kh) {
            rf.decisions[l] =
                route_train(router_layer_tensors(rt, l), kh, n_edge, tau, noise_rng);
        },
        [&](std::size_t l, std::size_t h, const Tensor& q, const Tensor& k, const Tensor& v,
            const Tensor& bias) {
            // STE mix: forward picks the hard branch, backward sees both.
            Tensor o_full = full_attention(q, k, v, /*causal=*/true, &bias);
            Tensor o_sparse = sparse_attention(q, k, v, pattern_mask(sa_pattern, q, k), &bias);
            const Tensor& r =
                mix == RouteMix::Ste ? rf.decisions[l].ste : rf.decisions[l].soft;
            Tensor w_fa = select(r, h * 2 + 0);
            Tensor w_sa = select(r, h * 2 + 1);
            return add(scale_by(o_full, w_fa), scale_by(o_sparse, w_sa));
        });
    return rf;
}

RoutedForward forward_routed_infer(Graph& g, const BoundParams& bb, const BoundParams& rt,
                                   const ModelDims& dims, const std::vector<std::size_t>& tokens,
                                   const SparsityPattern& sa_pattern, std::size_t n_edge,
                                   ForwardCaptures* cap) {
    RoutedForward rf;
    rf.decisions.resize(dims.layers);
    rf.logits = transformer_body(
        g, bb, dims, tokens,
        [&](std::size_t l, const std::vector<Tensor>& kh) {
            rf.decisions[l] = route_infer(router_layer_tensors(rt, l), kh, n_edge);
        },
        [&](std::size_t l, std::size_t h, const Tensor& q, const Tensor& k, const Tensor& v,
            const Tensor& bias) {
            const HeadMode mode = rf.decisions[l].hard[h];
            const std::size_t s = q.shape()[0];
            AttnMask mask = (mode == HeadMode::FA) ? causal_mask(s) : pattern_mask(sa_pattern, q, k);
            auto res = attention_with_probs(q, k, v, mask, bias);
            if (cap && cap->want_attn_probs) {
                cap->attn_probs.resize(dims.layers * dims.heads);
                cap->attn_probs[l * dims.heads + h] = res.probs.value();
            }
            return res.out;
        });
    return rf;
}

EvalResult eval_forward(const Backbone& model, const std::vector<std::size_t>& tokens,
                        const EvalRouting& routing, bool capture_probs) {
    Graph g;
    BoundParams bb = bind_params(g, model.params, false);
    ForwardCaptures cap;
    cap.want_attn_probs = capture_probs;
    EvalResult res;
    if (routing.router != nullptr) {
        BoundParams rt = bind_params(g, routing.router->params, false);
        RoutedForward rf = forward_routed_infer(g, bb, rt, model.dims, tokens, routing.sa_pattern,
                                                routing.n_edge, &cap);
        res.logits = rf.logits.value();
        for (const auto& dec : rf.decisions) {
            res.modes.insert(res.modes.end(), dec.hard.begin(), dec.hard.end());
            res.pooled.push_back(dec.pooled.value());
            res.task_rep.push_back(dec.task_rep.value());
        }
    } else {
        Tensor logits = forward_fixed(g, bb, model.dims, tokens, routing.fixed_modes,
                                      routing.sa_pattern, &cap);
        res.logits = logits.value();
        res.modes = routing.fixed_modes;
    }
    res.attn_probs = std::move(cap.attn_probs);
    return res;
}

}  // namespace elastic
