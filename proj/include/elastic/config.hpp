// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "elastic/model.hpp"
#include "elastic/tasks.hpp"
#include "elastic/train.hpp"

namespace elastic {

// One config object drives every command; the JSON file doubles as the
// experiment record (it is echoed into checkpoints).
struct RunConfig {
    ModelDims model;

    // SA pattern
    std::string pattern_kind = "streaming";  // streaming | block_sparse
    std::size_t sink = 4;
    std::size_t window = 32;
    std::size_t block_size = 4;
    double mass_threshold = 0.9;

    // router
    std::size_t n_edge = 8;
    std::size_t hidden_mult = 4;
    AnnealSchedule schedule;  // tau_init 1.0, tau_min 0.1, decay 0.6

    // tasks
    std::size_t needle_seq_len = 128;
    std::size_t local_seq_len = 64;
    std::size_t local_window = 2;
    std::size_t local_alphabet = 8;

    PretrainConfig pretrain;
    TrainConfig train;

    std::size_t eval_examples = 200;

    // dispatch benchmark
    std::vector<std::size_t> bench_seq_lens = {512, 2048, 8192};
    std::size_t bench_heads = 4;
    std::size_t bench_head_dim = 16;

    std::uint64_t seed = 7;

    SparsityPattern sa_pattern() const;
    std::vector<TaskSpec> task_specs() const;  // [needle, local]

    static RunConfig defaults();
    static RunConfig from_json_text(const std::string& text);
    static RunConfig from_file(const std::string& path);
    std::string to_json_text() const;
};

}  // namespace elastic
