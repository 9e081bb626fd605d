// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "elastic/params.hpp"

namespace elastic {

// Linear warmup over the first warmup_ratio of steps, cosine decay to zero
// afterwards.
double warmup_cosine_lr(double base_lr, std::size_t step, std::size_t total_steps,
                        double warmup_ratio);

// Decoupled weight decay Adam over a ParamStore. Gradients are read from the
// per-graph bound leaves after backward().
class AdamW {
public:
    struct Config {
        double beta1 = 0.9;
        double beta2 = 0.95;
        double eps = 1e-8;
        double weight_decay = 0.0;
    };

    AdamW() = default;
    AdamW(std::size_t total_params, Config cfg);

    void step(ParamStore& params, const BoundParams& bound, double lr);

    const Config& config() const { return cfg_; }
    std::size_t steps_taken() const { return t_; }

private:
    Config cfg_;
    std::size_t t_ = 0;
    std::vector<double> m_, v_;
};

}  // namespace elastic
