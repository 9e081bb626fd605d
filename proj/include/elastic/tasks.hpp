// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "elastic/model.hpp"

namespace elastic {

enum class Regime : std::uint8_t { Sensitive, Robust };

const char* regime_name(Regime r);

// Token-range layout shared by both generators (vocab must be >= 64):
//   fillers [0, 32), values [32, 48), keys [48, 63), query marker 63.
struct TaskSpec {
    enum class Kind : std::uint8_t { NeedleRetrieval, LocalAggregate };

    std::string name;
    Kind kind = Kind::NeedleRetrieval;
    Regime regime = Regime::Sensitive;
    std::size_t seq_len_min = 128;
    std::size_t seq_len_max = 128;
    std::size_t vocab = 64;
    std::uint64_t seed = 0;
    std::size_t n_edge = 8;        // needle: exclusion margin at both ends
    std::size_t local_window = 2;  // local task: label depends on this many trailing tokens
    std::size_t min_window = 32;   // local task: generated sequences satisfy s >= min_window
    std::size_t local_alphabet = 8;  // local task: tokens drawn from [0, local_alphabet)

    static TaskSpec needle(std::size_t seq_len, std::size_t n_edge, std::uint64_t seed);
    static TaskSpec local(std::size_t seq_len, std::size_t window, std::size_t min_window,
                          std::uint64_t seed);
};

struct Example {
    std::vector<std::size_t> tokens;
    std::vector<long> labels;               // -1 = position not scored
    std::vector<std::size_t> needle_pos;    // planted (key, value) indices, empty for local
};

struct TaskBatch {
    std::string task_id;
    Regime regime = Regime::Sensitive;
    std::vector<Example> examples;
};

// Deterministic per-(stream, index) example generation. Streams with
// different names never share draws.
Example gen_example(const TaskSpec& spec, const char* stream, std::uint64_t index);
TaskBatch make_batch(const TaskSpec& spec, const char* stream, std::uint64_t first_index,
                     std::size_t count);

// Recomputes labels from tokens alone; throws ValueError on any mismatch.
void verify_batch_labels(const TaskSpec& spec, const TaskBatch& batch);

// Fraction of scored positions predicted correctly under the given routing.
double task_accuracy(const Backbone& model, const TaskSpec& spec, const EvalRouting& routing,
                     std::size_t n_examples, const char* stream = "eval");

struct PretrainConfig {
    std::size_t max_steps = 4000;
    std::size_t batch = 8;
    double lr = 1e-3;
    double warmup_ratio = 0.05;
    double weight_decay = 0.0;
    std::size_t eval_every = 100;
    std::size_t eval_examples = 128;
    double accuracy_floor = 0.95;
    std::uint64_t seed = 7;
};

struct PretrainOutcome {
    std::size_t steps_run = 0;
    std::vector<double> final_accuracy;  // per spec, same order as specs
};

// Trains the backbone all-FA on the task mixture until every task clears the
// accuracy floor; throws TrainAbort if the budget runs out first.
PretrainOutcome pretrain_backbone(Backbone& model, const std::vector<TaskSpec>& specs,
                                  const PretrainConfig& cfg,
                                  std::vector<std::string>* log_lines = nullptr);

}  // namespace elastic
