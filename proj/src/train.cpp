// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#include "elastic/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "json.hpp"

namespace elastic {

TrainState init_train_state(const std::vector<TaskSpec>& specs, const TrainConfig& cfg) {
    TrainState st;
    st.total_steps = cfg.steps;
    st.schedule = cfg.schedule;
    st.seed = cfg.seed;
    st.tau = cfg.schedule.tau(0.0);
    Rng rng(derive_seed(cfg.seed, "lambda-init"));
    for (const auto& spec : specs) {
        LambdaPair lp;
        lp.l1 = rng.uniform(0.0, cfg.lambda_init_max);
        lp.l2 = rng.uniform(0.0, cfg.lambda_init_max);
        st.lambdas[spec.name] = lp;
        st.targets[spec.name] = spec.regime == Regime::Robust ? cfg.t_robust : cfg.t_sensitive;
    }
    return st;
}

std::string metrics_jsonl(const MetricsRecord& rec) {
    nlohmann::json j;
    j["step"] = rec.step;
    j["task_id"] = rec.task_id;
    j["lm_loss"] = rec.lm_loss;
    j["reg_loss"] = rec.reg_loss;
    j["msr"] = rec.msr;
    j["esr"] = rec.esr;
    j["lambda1"] = rec.lambda1;
    j["lambda2"] = rec.lambda2;
    j["tau"] = rec.tau;
    return j.dump();
}

Tensor objective(const Tensor& lm_loss, const Tensor& msr_soft, double t, double l1, double l2) {
    Tensor diff = add_scalar(msr_soft, -t);
    Tensor reg = add(scale(diff, l1), scale(mul(diff, diff), l2));
    return add(lm_loss, reg);
}

void update_lambdas(TrainState& state, const std::string& task_id, double l_diff, double reg_lr) {
    auto it = state.lambdas.find(task_id);
    if (it == state.lambdas.end()) throw ValueError("unknown task_id '" + task_id + "'");
    it->second.l1 += reg_lr * l_diff;
    it->second.l2 += reg_lr * l_diff * l_diff;
    if (it->second.l2 < 0.0) it->second.l2 = 0.0;
}

namespace {

std::vector<std::size_t> scored_positions(const Example& ex) {
    std::vector<std::size_t> pos;
    for (std::size_t i = 0; i < ex.labels.size(); ++i) {
        if (ex.labels[i] >= 0) pos.push_back(i);
    }
    return pos;
}

std::string abort_diag(std::size_t step, const std::string& task, double tau,
                       const LambdaPair& lp) {
    nlohmann::json j;
    j["step"] = step;
    j["task_id"] = task;
    j["tau"] = tau;
    j["lambda1"] = lp.l1;
    j["lambda2"] = lp.l2;
    j["reason"] = "non-finite loss";
    return j.dump();
}

}  // namespace

MetricsRecord train_step(const Backbone& model, RouterStack& router, AdamW& opt,
                         const TaskBatch& batch, TrainState& state, const TrainConfig& cfg) {
    if (batch.examples.empty()) throw ValueError("train_step: empty batch");
    const auto t_it = state.targets.find(batch.task_id);
    if (t_it == state.targets.end()) throw ValueError("unknown task_id '" + batch.task_id + "'");
    const double target = t_it->second;
    const LambdaPair lp = state.lambdas.at(batch.task_id);

    const double progress =
        state.total_steps == 0
            ? 0.0
            : static_cast<double>(state.step) / static_cast<double>(state.total_steps);
    const double tau = state.schedule.tau(std::min(1.0, progress));
    state.tau = tau;

    Graph g;
    BoundParams bb = bind_params(g, model.params, false);   // frozen backbone
    BoundParams rt = bind_params(g, router.params, true);
    Rng noise_rng(derive_seed(state.seed, "gumbel", state.step));

    Tensor lm_sum;
    std::vector<Tensor> ste_all;
    double sa_count = 0.0;
    double rho_sum = 0.0;
    for (const auto& ex : batch.examples) {
        RoutedForward rf = forward_routed_train(g, bb, rt, model.dims, ex.tokens, cfg.sa_pattern,
                                                cfg.n_edge, tau, noise_rng);
        const auto pos = scored_positions(ex);
        std::vector<std::size_t> labels;
        labels.reserve(pos.size());
        for (std::size_t i : pos) labels.push_back(static_cast<std::size_t>(ex.labels[i]));
        Tensor ex_loss = cross_entropy(gather_rows(rf.logits, pos), labels);
        lm_sum = lm_sum.defined() ? add(lm_sum, ex_loss) : ex_loss;
        const double rho = cfg.sa_pattern.content_dependent()
                               ? 0.0  // filled per head below
                               : cfg.sa_pattern.rho(ex.tokens.size());
        for (const auto& dec : rf.decisions) {
            ste_all.push_back(dec.ste);
            for (HeadMode m : dec.hard) {
                if (m == HeadMode::SA) {
                    sa_count += 1.0;
                    rho_sum += rho;
                }
            }
        }
    }
    const double inv_b = 1.0 / static_cast<double>(batch.examples.size());
    Tensor lm = scale(lm_sum, inv_b);
    Tensor msr_soft = compute_msr_soft(ste_all);
    const double total_heads = static_cast<double>(ste_all.size() * model.dims.heads);
    const double msr_hard = sa_count * (1.0 / total_heads);

    Tensor obj = objective(lm, msr_soft, target, lp.l1, lp.l2);
    const double obj_val = obj.item();
    if (!std::isfinite(obj_val)) {
        throw TrainAbort("train_step: non-finite loss at step " + std::to_string(state.step),
                         abort_diag(state.step, batch.task_id, tau, lp));
    }
    g.backward(obj);
    const double lr_now =
        warmup_cosine_lr(cfg.router_lr, state.step, state.total_steps, cfg.warmup_ratio);
    opt.step(router.params, rt, lr_now);

    const double l_diff = msr_hard - target;
    MetricsRecord rec;
    rec.step = state.step;
    rec.task_id = batch.task_id;
    rec.lm_loss = lm.item();
    rec.reg_loss = lp.l1 * l_diff + lp.l2 * l_diff * l_diff;
    rec.msr = msr_hard;
    rec.esr = rho_sum / total_heads;
    rec.lambda1 = lp.l1;
    rec.lambda2 = lp.l2;
    rec.tau = tau;

    update_lambdas(state, batch.task_id, l_diff, cfg.reg_lr);
    state.step += 1;
    return rec;
}

TrainRunResult train_router(const Backbone& model, RouterStack& router,
                            const std::vector<TaskSpec>& specs, const TrainConfig& cfg) {
    if (specs.empty()) throw ValueError("train_router: no task specs");
    TrainRunResult res;
    res.state = init_train_state(specs, cfg);
    AdamW opt(router.params.total_size(), {0.9, 0.95, 1e-8, cfg.weight_decay});
    res.log.reserve(cfg.steps);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const TaskSpec& spec = specs[step % specs.size()];
        TaskBatch batch = make_batch(spec, "train", step * cfg.batch, cfg.batch);
        res.log.push_back(train_step(model, router, opt, batch, res.state, cfg));
    }
    return res;
}

double pure_penalty_msr(const PurePenaltyConfig& cfg) {
    RouterConfig rc;
    rc.heads = cfg.heads;
    rc.head_dim = cfg.head_dim;
    rc.n_edge = std::max<std::size_t>(1, cfg.seq_len / 4);
    RouterStack router = RouterStack::init(1, rc, derive_seed(cfg.seed, "pure-penalty"));
    AdamW opt(router.params.total_size(), {0.9, 0.95, 1e-8, 0.0});

    // Fixed synthetic key states, one [s, d'] matrix per head.
    Rng data_rng(derive_seed(cfg.seed, "pure-penalty-data"));
    std::vector<std::vector<double>> keys(cfg.heads);
    for (auto& k : keys) k = data_rng.uniform_vec(cfg.seq_len * cfg.head_dim, -1.0, 1.0);

    LambdaPair lp;
    Rng lambda_rng(derive_seed(cfg.seed, "pure-penalty-lambda"));
    lp.l1 = lambda_rng.uniform(0.0, cfg.lambda_init_max);
    lp.l2 = lambda_rng.uniform(0.0, cfg.lambda_init_max);

    std::vector<double> msr_trace;
    msr_trace.reserve(cfg.steps);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        Graph g;
        BoundParams rt = bind_params(g, router.params, true);
        std::vector<Tensor> kh(cfg.heads);
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            kh[h] = g.constant({cfg.seq_len, cfg.head_dim}, keys[h]);
        }
        Rng noise_rng(derive_seed(cfg.seed, "pure-penalty-gumbel", step));
        const double progress = static_cast<double>(step) / static_cast<double>(cfg.steps);
        const double tau = cfg.schedule.tau(progress);
        RoutingDecision dec =
            route_train(router_layer_tensors(rt, 0), kh, rc.n_edge, tau, noise_rng);
        Tensor msr_soft = compute_msr_soft({dec.ste});
        Tensor diff = add_scalar(msr_soft, -cfg.target);
        Tensor obj = add(scale(diff, lp.l1), scale(mul(diff, diff), lp.l2));
        g.backward(obj);
        opt.step(router.params, rt, cfg.router_lr);

        const double msr_hard = compute_msr_hard(dec.hard);
        msr_trace.push_back(msr_hard);
        const double l_diff = msr_hard - cfg.target;
        lp.l1 += cfg.reg_lr * l_diff;
        lp.l2 += cfg.reg_lr * l_diff * l_diff;
        if (lp.l2 < 0.0) lp.l2 = 0.0;
    }
    const std::size_t w = std::min(cfg.trailing_window, msr_trace.size());
    double acc = 0.0;
    for (std::size_t i = msr_trace.size() - w; i < msr_trace.size(); ++i) acc += msr_trace[i];
    return acc / static_cast<double>(w);
}

}  // namespace elastic
