// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "elastic/optim.hpp"
#include "elastic/sparsity.hpp"
#include "elastic/tasks.hpp"

namespace elastic {

struct TrainConfig {
    std::size_t steps = 800;
    std::size_t batch = 4;
    double router_lr = 5e-4;
    double reg_lr = 1e-3;
    double warmup_ratio = 0.2;
    double weight_decay = 0.1;
    double lambda_init_max = 0.1;
    double t_robust = 1.0;
    double t_sensitive = 0.7;
    AnnealSchedule schedule;
    SparsityPattern sa_pattern = SparsityPattern::streaming(4, 32);
    std::size_t n_edge = 8;
    std::uint64_t seed = 7;
};

struct LambdaPair {
    double l1 = 0.0;
    double l2 = 0.0;
};

struct TrainState {
    std::size_t step = 0;
    std::size_t total_steps = 0;
    double tau = 1.0;
    std::map<std::string, LambdaPair> lambdas;  // keyed by task_id
    std::map<std::string, double> targets;      // keyed by task_id
    AnnealSchedule schedule;
    std::uint64_t seed = 0;
};

TrainState init_train_state(const std::vector<TaskSpec>& specs, const TrainConfig& cfg);

struct MetricsRecord {
    std::size_t step = 0;
    std::string task_id;
    double lm_loss = 0.0;
    double reg_loss = 0.0;
    double msr = 0.0;
    double esr = 0.0;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    double tau = 1.0;
};

// One JSON object per record, fixed keys, deterministic formatting.
std::string metrics_jsonl(const MetricsRecord& rec);

// L = lm + l1*(msr - t) + l2*(msr - t)^2; the multipliers enter as constants.
Tensor objective(const Tensor& lm_loss, const Tensor& msr_soft, double t, double l1, double l2);

// Dual ascent on the realized constraint gap: l1 += lr*diff, l2 += lr*diff^2,
// l2 clamped to >= 0 (l1 may go negative, relaxing pressure on undershoot).
void update_lambdas(TrainState& state, const std::string& task_id, double l_diff, double reg_lr);

// One optimization step on the router parameters; the backbone stays frozen.
MetricsRecord train_step(const Backbone& model, RouterStack& router, AdamW& opt,
                         const TaskBatch& batch, TrainState& state, const TrainConfig& cfg);

struct TrainRunResult {
    std::vector<MetricsRecord> log;
    TrainState state;
};

// Round-robin over tasks for cfg.steps steps.
TrainRunResult train_router(const Backbone& model, RouterStack& router,
                            const std::vector<TaskSpec>& specs, const TrainConfig& cfg);

// Penalty-only drill: no language loss, a 1-layer router over fixed random
// key states. Returns the trailing-window mean of the realized head sparsity
// ratio after `steps` steps.
struct PurePenaltyConfig {
    std::size_t heads = 8;
    std::size_t head_dim = 8;
    std::size_t seq_len = 16;
    std::size_t steps = 500;
    double target = 0.5;
    // Faster rates than the full run: the drill has no language loss damping
    // the dual ascent, and must settle within 500 steps.
    double router_lr = 1e-3;
    double reg_lr = 1e-2;
    double lambda_init_max = 0.1;
    AnnealSchedule schedule;
    std::size_t trailing_window = 100;
    std::uint64_t seed = 11;
};
double pure_penalty_msr(const PurePenaltyConfig& cfg);

}  // namespace elastic
