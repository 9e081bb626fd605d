// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#include "elastic/optim.hpp"

#include <cmath>

namespace elastic {

double warmup_cosine_lr(double base_lr, std::size_t step, std::size_t total_steps,
                        double warmup_ratio) {
    if (total_steps == 0) return base_lr;
    const double warmup_steps = warmup_ratio * static_cast<double>(total_steps);
    const double s = static_cast<double>(step);
    if (warmup_steps >= 1.0 && s < warmup_steps) {
        return base_lr * (s + 1.0) / warmup_steps;
    }
    const double denom = std::max(1.0, static_cast<double>(total_steps) - warmup_steps);
    const double progress = std::min(1.0, (s - warmup_steps) / denom);
    return base_lr * 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846));
}

AdamW::AdamW(std::size_t total_params, Config cfg)
    : cfg_(cfg), m_(total_params, 0.0), v_(total_params, 0.0) {}

void AdamW::step(ParamStore& params, const BoundParams& bound, double lr) {
    if (params.total_size() != m_.size()) {
        throw ValueError("AdamW: optimizer state sized for a different parameter set");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::size_t off = 0;
    auto& entries = params.entries();
    for (std::size_t e = 0; e < entries.size(); ++e) {
        auto& val = entries[e].value;
        const auto& grad = bound.leaves[e].grad();
        for (std::size_t i = 0; i < val.size(); ++i) {
            const double gval = grad[i];
            double& m = m_[off + i];
            double& v = v_[off + i];
            m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * gval;
            v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * gval * gval;
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            val[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * val[i]);
        }
        off += val.size();
    }
}

}  // namespace elastic
