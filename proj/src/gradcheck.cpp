// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#include "elastic/gradcheck.hpp"

#include <cmath>
#include <string_view>

namespace elastic {

GradCheckReport check_gradient(const LossBuilder& build,
                               const std::vector<Shape>& input_shapes,
                               const std::vector<std::vector<double>>& inputs,
                               double tol, double h, double floor) {
    // Analytic gradients.
    std::vector<std::vector<double>> analytic;
    {
        Graph g;
        std::vector<Tensor> leaves;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            leaves.push_back(g.leaf(input_shapes[i], inputs[i], true));
        }
        Tensor loss = build(g, leaves);
        g.backward(loss);
        for (const auto& l : leaves) analytic.push_back(l.grad());
    }

    auto eval = [&](const std::vector<std::vector<double>>& xs) {
        Graph g;
        std::vector<Tensor> leaves;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            leaves.push_back(g.leaf(input_shapes[i], xs[i], false));
        }
        return build(g, leaves).item();
    };

    GradCheckReport rep;
    rep.pass = true;
    auto probe = inputs;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (std::size_t j = 0; j < inputs[i].size(); ++j) {
            const double orig = probe[i][j];
            probe[i][j] = orig + h;
            const double fp = eval(probe);
            probe[i][j] = orig - h;
            const double fm = eval(probe);
            probe[i][j] = orig;
            const double num = (fp - fm) / (2.0 * h);
            const double ana = analytic[i][j];
            double rel;
            if (std::abs(num) < floor && std::abs(ana) < floor) {
                rel = std::abs(num - ana) / floor;
            } else {
                rel = std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), floor});
            }
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst = "input#" + std::to_string(i) + "[" + std::to_string(j) + "]";
            }
        }
    }
    rep.pass = rep.max_rel_err <= tol;
    return rep;
}

double relu_kink_margin(const LossBuilder& build, const std::vector<Shape>& input_shapes,
                        const std::vector<std::vector<double>>& inputs) {
    Graph g;
    std::vector<Tensor> leaves;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        leaves.push_back(g.leaf(input_shapes[i], inputs[i]));
    }
    build(g, leaves);
    double margin = 1e300;
    for (std::size_t id = 0; id < g.num_nodes(); ++id) {
        const auto& n = g.node(static_cast<int>(id));
        if (std::string_view(n.op) == "relu") {
            for (double x : g.node(n.inputs[0]).value) {
                margin = std::min(margin, std::abs(x));
            }
        }
    }
    return margin;
}

}  // namespace elastic
