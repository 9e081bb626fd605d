// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <vector>

#include "elastic/common.hpp"

namespace elastic {

class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
class Tensor {
public:
    Tensor() = default;

    const Shape& shape() const;
    std::size_t size() const;
    const std::vector<double>& value() const;
    const std::vector<double>& grad() const;
    bool requires_grad() const;
    double item() const;  // scalar tensors only

    bool defined() const { return graph_ != nullptr; }
    int id() const { return id_; }
    Graph* graph() const { return graph_; }

private:
    friend class Graph;
    Tensor(Graph* g, int id) : graph_(g), id_(id) {}
    Graph* graph_ = nullptr;
    int id_ = -1;
};

/// Dynamic tape of tensor-level operations. Nodes are recorded in creation
/// order, which is already a topological order, so backward() is a single
/// reverse sweep. One graph per forward pass; backward() consumes it.
/// Node storage is a deque so value/grad references stay valid while the
/// graph grows.
class Graph {
public:
    struct Node {
        Shape shape;
        std::vector<double> value;
        std::vector<double> grad;  // allocated lazily during backward
        bool requires_grad = false;
        const char* op = "leaf";
        std::vector<int> inputs;
        std::function<void(Graph&, int)> backward;
    };

    Tensor leaf(Shape shape, std::vector<double> value, bool requires_grad = false);
    Tensor constant(Shape shape, std::vector<double> value) { return leaf(std::move(shape), std::move(value), false); }
    Tensor scalar(double v) { return leaf({1}, {v}, false); }
    Tensor zeros(const Shape& shape, bool requires_grad = false);

    /// Reverse accumulation from a scalar loss. Each reachable node is
    /// visited exactly once; every requires_grad leaf ends with a grad
    /// buffer (zeros if unreachable). A second call on the same graph throws.
    void backward(const Tensor& loss);

    std::size_t num_nodes() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    // -- internals used by op implementations --
    int add_node(Shape shape, std::vector<double> value, bool requires_grad, const char* op,
                 std::vector<int> inputs, std::function<void(Graph&, int)> backward_fn);
    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    std::vector<double>& grad_buf(int id);  // allocates zeros on first touch
    Tensor handle(int id) { return Tensor(this, id); }

private:
    std::deque<Node> nodes_;
    bool consumed_ = false;
};

// ---- elementwise / structural ops ----
Tensor add(const Tensor& a, const Tensor& b);  // same shape, or [n,m] + [m] row broadcast
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);  // 2-D

// ---- reductions ----
Tensor sum(const Tensor& x);        // -> scalar
Tensor mean(const Tensor& x);       // -> scalar
Tensor mean_rows(const Tensor& x);  // [n,m] -> [m]

// ---- shape manipulation ----
Tensor concat_lastdim(const std::vector<Tensor>& xs);        // [n,m_i] -> [n, sum m_i]
Tensor stack_rows(const std::vector<Tensor>& xs);            // k x [m] -> [k,m]
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len);
Tensor reshape(const Tensor& x, Shape new_shape);  // same element count
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows);
Tensor select(const Tensor& x, std::size_t flat_index);      // -> scalar

// ---- masking / attention building blocks ----
// Fills positions where mask != 0 with `value`; their gradient is zeroed.
Tensor masked_fill(const Tensor& x, const std::vector<std::uint8_t>& mask, double value);
Tensor softmax_lastdim(const Tensor& x);

// Multiplies every element of x by scalar tensor s; grads flow to both.
Tensor scale_by(const Tensor& x, const Tensor& s);

// Mean negative log-likelihood over rows of [B,V] logits. Gradient is
// (softmax - onehot) / B.
Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels);

// Same forward values, no gradient flow to x.
Tensor detach(const Tensor& x);

}  // namespace elastic
