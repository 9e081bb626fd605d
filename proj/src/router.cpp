// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#include "elastic/router.hpp"

#include <algorithm>
#include <cmath>

namespace elastic {

double AnnealSchedule::tau(double progress) const {
    if (!(progress >= 0.0 && progress <= 1.0)) {
        throw ValueError("anneal: progress must be in [0,1], got " + std::to_string(progress));
    }
    return std::max(tau_min, tau_init * std::exp(-decay * progress));
}

namespace {

std::vector<double> fan_in_uniform(Rng& rng, std::size_t fan_in, std::size_t count) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return rng.uniform_vec(count, -bound, bound);
}

std::string layer_prefix(std::size_t layer) { return "router.l" + std::to_string(layer) + "."; }

}  // namespace

RouterStack RouterStack::init(std::size_t layers, const RouterConfig& cfg, std::uint64_t seed) {
    if (cfg.n_edge == 0) throw ValueError("router: n_edge must be >= 1");
    RouterStack rs;
    rs.cfg = cfg;
    rs.layers = layers;
    const std::size_t d = cfg.head_dim;
    const std::size_t hid = cfg.hidden_mult * d;
    for (std::size_t l = 0; l < layers; ++l) {
        Rng rng(derive_seed(seed, "router", l));
        const std::string p = layer_prefix(l);
        rs.params.add(p + "task.w1", {d, hid}, fan_in_uniform(rng, d, d * hid));
        rs.params.add(p + "task.b1", {hid}, std::vector<double>(hid, 0.0));
        rs.params.add(p + "task.w2", {hid, d}, fan_in_uniform(rng, hid, hid * d));
        rs.params.add(p + "task.b2", {d}, std::vector<double>(d, 0.0));
        rs.params.add(p + "route.w1", {d, hid}, fan_in_uniform(rng, d, d * hid));
        rs.params.add(p + "route.b1", {hid}, std::vector<double>(hid, 0.0));
        rs.params.add(p + "route.w2", {hid, d}, fan_in_uniform(rng, hid, hid * d));
        rs.params.add(p + "route.b2", {d}, std::vector<double>(d, 0.0));
        rs.params.add(p + "route.w3", {d, 2}, fan_in_uniform(rng, d, d * 2));
        rs.params.add(p + "route.b3", {2}, std::vector<double>(2, 0.0));
    }
    return rs;
}

std::size_t RouterStack::params_per_layer() const {
    const std::size_t d = cfg.head_dim;
    const std::size_t hid = cfg.hidden_mult * d;
    return d * hid + hid + hid * d + d          // task MLP
           + d * hid + hid + hid * d + d + d * 2 + 2;  // router MLP
}

RouterLayerTensors router_layer_tensors(const BoundParams& bp, std::size_t layer) {
    const std::string p = layer_prefix(layer);
    RouterLayerTensors t;
    t.tw1 = bp.get(p + "task.w1");
    t.tb1 = bp.get(p + "task.b1");
    t.tw2 = bp.get(p + "task.w2");
    t.tb2 = bp.get(p + "task.b2");
    t.rw1 = bp.get(p + "route.w1");
    t.rb1 = bp.get(p + "route.b1");
    t.rw2 = bp.get(p + "route.w2");
    t.rb2 = bp.get(p + "route.b2");
    t.rw3 = bp.get(p + "route.w3");
    t.rb3 = bp.get(p + "route.b3");
    return t;
}

std::vector<std::size_t> boundary_indices(std::size_t s, std::size_t n_edge) {
    if (s == 0) throw ValueError("boundary_indices: empty sequence");
    const std::size_t m = std::min(n_edge, s);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < m; ++i) idx.push_back(i);
    for (std::size_t i = s - m; i < s; ++i) {
        if (i >= m) idx.push_back(i);  // skip overlap with the prefix
    }
    return idx;
}

Tensor boundary_pool(const std::vector<Tensor>& per_head_k, std::size_t n_edge) {
    if (per_head_k.empty()) throw ValueError("boundary_pool: no heads");
    if (n_edge == 0) throw ValueError("boundary_pool: n_edge must be >= 1");
    const std::size_t s = per_head_k[0].shape()[0];
    const auto idx = boundary_indices(s, n_edge);
    std::vector<Tensor> pooled;
    pooled.reserve(per_head_k.size());
    for (const auto& k : per_head_k) {
        pooled.push_back(mean_rows(gather_rows(k, idx)));
    }
    return stack_rows(pooled);
}

Tensor task_features(const RouterLayerTensors& p, const Tensor& pooled) {
    Tensor h = relu(add(matmul(pooled, p.tw1), p.tb1));
    return add(matmul(h, p.tw2), p.tb2);
}

Tensor router_logits(const RouterLayerTensors& p, const Tensor& pooled) {
    Tensor t = task_features(p, pooled);
    Tensor h1 = relu(add(matmul(t, p.rw1), p.rb1));
    Tensor h2 = relu(add(matmul(h1, p.rw2), p.rb2));
    return add(matmul(h2, p.rw3), p.rb3);
}

double gumbel_from_uniform(double u, double eps) {
    if (!(u > 0.0 && u < 1.0)) {
        throw ValueError("gumbel_from_uniform: u must be in (0,1), got " + std::to_string(u));
    }
    return -std::log(-std::log(u + eps) + eps);
}

std::vector<double> sample_gumbel(Rng& rng, std::size_t n, double eps) {
    std::vector<double> g(n);
    for (auto& x : g) x = gumbel_from_uniform(rng.uniform01(), eps);
    return g;
}

Tensor gumbel_soft_route(const Tensor& z, const std::vector<double>& noise, double tau) {
    if (!(tau > 0.0)) throw ValueError("gumbel_soft_route: tau must be > 0");
    const Shape& s = z.shape();
    if (s.size() != 2 || s[1] != 2) {
        throw ShapeError("gumbel_soft_route: z must be [H,2], got " + shape_str(s));
    }
    const std::size_t heads = s[0];
    if (noise.size() != 2 * heads) {
        throw ValueError("gumbel_soft_route: need one noise pair per head");
    }
    Graph* g = z.graph();
    Tensor z_sa = slice_cols(z, 1, 1);
    Tensor z_fa = slice_cols(z, 0, 1);
    Tensor zdiff = sub(z_sa, z_fa);  // [H,1]
    std::vector<double> gdiff(heads);
    for (std::size_t h = 0; h < heads; ++h) gdiff[h] = noise[2 * h + 1] - noise[2 * h];
    Tensor noisy = add(zdiff, g->constant({heads, 1}, gdiff));
    Tensor p_sa = sigmoid(scale(noisy, 1.0 / tau));
    Tensor p_fa = add_scalar(scale(p_sa, -1.0), 1.0);
    return concat_lastdim({p_fa, p_sa});
}

HardenResult ste_harden(const Tensor& r_soft) {
    const Shape& s = r_soft.shape();
    if (s.size() != 2 || s[1] != 2) {
        throw ShapeError("ste_harden: expected [H,2], got " + shape_str(s));
    }
    const std::size_t heads = s[0];
    const auto& v = r_soft.value();
    HardenResult res;
    res.hard.resize(heads);
    std::vector<double> hard(heads * 2, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
        // argmax with ties resolving to FA (column 0)
        const bool sa = v[h * 2 + 1] > v[h * 2 + 0];
        res.hard[h] = sa ? HeadMode::SA : HeadMode::FA;
        hard[h * 2 + (sa ? 1 : 0)] = 1.0;
    }
    Graph* g = r_soft.graph();
    Tensor hard_t = g->constant({heads, 2}, std::move(hard));
    res.ste = add(hard_t, sub(r_soft, detach(r_soft)));
    return res;
}

namespace {

RoutingDecision route_impl(const RouterLayerTensors& p, const std::vector<Tensor>& per_head_k,
                           std::size_t n_edge, double tau, Rng* noise_rng) {
    RoutingDecision dec;
    dec.pooled = boundary_pool(per_head_k, n_edge);
    dec.task_rep = task_features(p, dec.pooled);
    Tensor h1 = relu(add(matmul(dec.task_rep, p.rw1), p.rb1));
    Tensor h2 = relu(add(matmul(h1, p.rw2), p.rb2));
    Tensor z = add(matmul(h2, p.rw3), p.rb3);
    const std::size_t heads = per_head_k.size();
    dec.tau = tau;
    if (noise_rng) {
        dec.noise = sample_gumbel(*noise_rng, 2 * heads);
        dec.soft = gumbel_soft_route(z, dec.noise, tau);
        auto hres = ste_harden(dec.soft);
        dec.ste = std::move(hres.ste);
        dec.hard = std::move(hres.hard);
    } else {
        // Noise-free: decide from the raw logits, expose the deterministic
        // sigmoid relaxation for inspection.
        dec.soft = gumbel_soft_route(z, std::vector<double>(2 * heads, 0.0), tau);
        const auto& zv = z.value();
        std::vector<double> hard(heads * 2, 0.0);
        dec.hard.resize(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            const bool sa = zv[h * 2 + 1] > zv[h * 2 + 0];
            dec.hard[h] = sa ? HeadMode::SA : HeadMode::FA;
            hard[h * 2 + (sa ? 1 : 0)] = 1.0;
        }
        dec.ste = z.graph()->constant({heads, 2}, std::move(hard));
    }
    return dec;
}

}  // namespace

RoutingDecision route_train(const RouterLayerTensors& p, const std::vector<Tensor>& per_head_k,
                            std::size_t n_edge, double tau, Rng& noise_rng) {
    return route_impl(p, per_head_k, n_edge, tau, &noise_rng);
}

RoutingDecision route_infer(const RouterLayerTensors& p, const std::vector<Tensor>& per_head_k,
                            std::size_t n_edge) {
    return route_impl(p, per_head_k, n_edge, 1.0, nullptr);
}

}  // namespace elastic
