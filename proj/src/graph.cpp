// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#include "elastic/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace elastic {

namespace {

void require(bool cond, const char* what) {
    if (!cond) throw ValueError(what);
}

void require_same_graph(const Tensor& a, const Tensor& b) {
    require(a.defined() && b.defined(), "undefined tensor");
    require(a.graph() == b.graph(), "tensors belong to different graphs");
}

void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// Treats a tensor as a [rows, cols] matrix using the last dim as cols.
std::pair<std::size_t, std::size_t> as_2d(const Shape& s) {
    require(!s.empty(), "rank-0 tensor");
    std::size_t cols = s.back();
    std::size_t rows = 1;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) rows *= s[i];
    return {rows, cols};
}

}  // namespace

// ---- Tensor accessors ----

const Shape& Tensor::shape() const { return graph_->node(id_).shape; }
std::size_t Tensor::size() const { return graph_->node(id_).value.size(); }
const std::vector<double>& Tensor::value() const { return graph_->node(id_).value; }
bool Tensor::requires_grad() const { return graph_->node(id_).requires_grad; }

const std::vector<double>& Tensor::grad() const {
    const auto& n = graph_->node(id_);
    if (n.grad.empty() && !n.value.empty()) {
        throw ValueError("tensor has no gradient (backward not run, or not reachable)");
    }
    return n.grad;
}

double Tensor::item() const {
    const auto& v = value();
    require(v.size() == 1, "item() on a non-scalar tensor");
    return v[0];
}

// ---- Graph ----

Tensor Graph::leaf(Shape shape, std::vector<double> value, bool requires_grad) {
    if (numel(shape) != value.size()) {
        throw ShapeError("leaf: data length " + std::to_string(value.size()) +
                         " does not match shape " + shape_str(shape));
    }
    check_finite(value, "leaf");
    return handle(add_node(std::move(shape), std::move(value), requires_grad, "leaf", {}, nullptr));
}

Tensor Graph::zeros(const Shape& shape, bool requires_grad) {
    return leaf(shape, std::vector<double>(numel(shape), 0.0), requires_grad);
}

int Graph::add_node(Shape shape, std::vector<double> value, bool requires_grad, const char* op,
                    std::vector<int> inputs, std::function<void(Graph&, int)> backward_fn) {
    if (debug_checks()) check_finite(value, op);
    Node n;
    n.shape = std::move(shape);
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.op = op;
    n.inputs = std::move(inputs);
    n.backward = std::move(backward_fn);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

std::vector<double>& Graph::grad_buf(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
}

void Graph::backward(const Tensor& loss) {
    require(loss.defined() && loss.graph() == this, "backward: loss from another graph");
    if (consumed_) throw ValueError("backward: graph already consumed (rebuild the graph)");
    const Node& root = node(loss.id());
    if (root.value.size() != 1) {
        throw ValueError("backward: loss must be scalar, got shape " + shape_str(root.shape));
    }
    consumed_ = true;
    grad_buf(loss.id())[0] = 1.0;
    for (int id = loss.id(); id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.empty()) continue;       // not reachable from the loss
        if (!n.requires_grad) continue;     // nothing upstream wants this gradient
        if (n.backward) n.backward(*this, id);
    }
    // Leaves that never received a contribution still report a (zero) grad.
    for (auto& n : nodes_) {
        if (n.requires_grad && n.inputs.empty() && n.grad.empty()) {
            n.grad.assign(n.value.size(), 0.0);
        }
    }
}

// ---- op helpers ----

namespace {

bool any_grad(std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts) {
        if (t->requires_grad()) return true;
    }
    return false;
}

Tensor make_op(Graph* g, Shape shape, std::vector<double> value, const char* op,
               std::vector<int> inputs, bool requires_grad,
               std::function<void(Graph&, int)> bw) {
    if (!requires_grad) bw = nullptr;
    return g->handle(g->add_node(std::move(shape), std::move(value), requires_grad, op,
                                 std::move(inputs), std::move(bw)));
}

// Elementwise unary op with dy/dx expressed from (x, y).
template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& x, const char* name, Fwd fwd, Bwd dfdx) {
    Graph* g = x.graph();
    const auto& xv = x.value();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
    int xid = x.id();
    return make_op(g, x.shape(), std::move(out), name, {xid}, x.requires_grad(),
                   [xid, dfdx](Graph& gr, int self) {
                       const auto& go = gr.node(self).grad;
                       const auto& xval = gr.node(xid).value;
                       const auto& yval = gr.node(self).value;
                       auto& gx = gr.grad_buf(xid);
                       for (std::size_t i = 0; i < gx.size(); ++i) {
                           gx[i] += go[i] * dfdx(xval[i], yval[i]);
                       }
                   });
}

}  // namespace

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_graph(a, b);
    Graph* g = a.graph();
    const auto& av = a.value();
    const auto& bv = b.value();
    const bool same = a.shape() == b.shape();
    // Row broadcast: [n,m] + [m].
    const bool bcast = !same && a.shape().size() >= 2 && b.shape().size() == 1 &&
                       a.shape().back() == b.shape()[0];
    if (!same && !bcast) shape_mismatch("add", a.shape(), b.shape());

    std::vector<double> out(av.size());
    if (same) {
        for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    } else {
        const std::size_t m = bv.size();
        for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i % m];
    }
    int aid = a.id(), bid = b.id();
    return make_op(g, a.shape(), std::move(out), "add", {aid, bid},
                   any_grad({&a, &b}),
                   [aid, bid, same](Graph& gr, int self) {
                       const auto& go = gr.node(self).grad;
                       if (gr.node(aid).requires_grad) {
                           auto& ga = gr.grad_buf(aid);
                           for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
                       }
                       if (gr.node(bid).requires_grad) {
                           auto& gb = gr.grad_buf(bid);
                           if (same) {
                               for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
                           } else {
                               const std::size_t m = gb.size();
                               for (std::size_t i = 0; i < go.size(); ++i) gb[i % m] += go[i];
                           }
                       }
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_graph(a, b);
    if (a.shape() != b.shape()) shape_mismatch("sub", a.shape(), b.shape());
    Graph* g = a.graph();
    const auto& av = a.value();
    const auto& bv = b.value();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
    int aid = a.id(), bid = b.id();
    return make_op(g, a.shape(), std::move(out), "sub", {aid, bid}, any_grad({&a, &b}),
                   [aid, bid](Graph& gr, int self) {
                       const auto& go = gr.node(self).grad;
                       if (gr.node(aid).requires_grad) {
                           auto& ga = gr.grad_buf(aid);
                           for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
                       }
                       if (gr.node(bid).requires_grad) {
                           auto& gb = gr.grad_buf(bid);
                           for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
                       }
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_graph(a, b);
    if (a.shape() != b.shape()) shape_mismatch("mul", a.shape(), b.shape());
    Graph* g = a.graph();
    const auto& av = a.value();
    const auto& bv = b.value();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    int aid = a.id(), bid = b.id();
    return make_op(g, a.shape(), std::move(out), "mul", {aid, bid}, any_grad({&a, &b}),
                   [aid, bid](Graph& gr, int self) {
                       const auto& go = gr.node(self).grad;
                       const auto& av2 = gr.node(aid).value;
                       const auto& bv2 = gr.node(bid).value;
                       if (gr.node(aid).requires_grad) {
                           auto& ga = gr.grad_buf(aid);
                           for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv2[i];
                       }
                       if (gr.node(bid).requires_grad) {
                           auto& gb = gr.grad_buf(bid);
                           for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av2[i];
                       }
                   });
}

Tensor scale(const Tensor& x, double c) {
    return unary_op(x, "scale", [c](double v) { return v * c; },
                    [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& x, double c) {
    return unary_op(x, "add_scalar", [c](double v) { return v + c; },
                    [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& x) {
    return unary_op(x, "exp", [](double v) { return std::exp(v); },
                    [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary_op(x, "log", [](double v) { return std::log(v); },
                    [](double v, double) { return 1.0 / v; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(x, "sigmoid",
                    [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
                    [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
    return unary_op(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
                    [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_same_graph(a, b);
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
        shape_mismatch("matmul", sa, sb);
    }
    const std::size_t n = sa[0], k = sa[1], m = sb[1];
    const auto& av = a.value();
    const auto& bv = b.value();
    std::vector<double> out(n * m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = av.data() + i * k;
        double* orow = out.data() + i * m;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            const double* brow = bv.data() + kk * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += aik * brow[j];
        }
    }
    int aid = a.id(), bid = b.id();
    return make_op(a.graph(), {n, m}, std::move(out), "matmul", {aid, bid}, any_grad({&a, &b}),
                   [aid, bid, n, k, m](Graph& gr, int self) {
                       const auto& go = gr.node(self).grad;
                       const auto& av2 = gr.node(aid).value;
                       const auto& bv2 = gr.node(bid).value;
                       if (gr.node(aid).requires_grad) {
                           auto& ga = gr.grad_buf(aid);  // dA = dC * B^T
                           for (std::size_t i = 0; i < n; ++i) {
                               for (std::size_t kk = 0; kk < k; ++kk) {
                                   double acc = 0.0;
                                   const double* grow = go.data() + i * m;
                                   const double* brow = bv2.data() + kk * m;
                                   for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
                                   ga[i * k + kk] += acc;
                               }
                           }
                       }
                       if (gr.node(bid).requires_grad) {
                           auto& gb = gr.grad_buf(bid);  // dB = A^T * dC
                           for (std::size_t i = 0; i < n; ++i) {
                               const double* grow = go.data() + i * m;
                               for (std::size_t kk = 0; kk < k; ++kk) {
                                   const double aik = av2[i * k + kk];
                                   double* brow = gb.data() + kk * m;
                                   for (std::size_t j = 0; j < m; ++j) brow[j] += aik * grow[j];
                               }
                           }
                       }
                   });
}

Tensor transpose(const Tensor& x) {
    const Shape& s = x.shape();
    require(s.size() == 2, "transpose: expects a 2-D tensor");
    const std::size_t n = s[0], m = s[1];
    const auto& xv = x.value();
    std::vector<double> out(n * m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) out[j * n + i] = xv[i * m + j];
    }
    int xid = x.id();
    return make_op(x.graph(), {m, n}, std::move(out), "transpose", {xid}, x.requires_grad(),
                   [xid, n, m](Graph& gr, int self) {
                       const auto& go = gr.node(self).grad;
                       auto& gx = gr.grad_buf(xid);
                       for (std::size_t j = 0; j < m; ++j) {
                           for (std::size_t i = 0; i < n; ++i) gx[i * m + j] += go[j * n + i];
                       }
                   });
}

// ---- reductions ----

Tensor sum(const Tensor& x) {
    const auto& xv = x.value();
    double acc = 0.0;
    for (double v : xv) acc += v;
    int xid = x.id();
    return make_op(x.graph(), {1}, {acc}, "sum", {xid}, x.requires_grad(),
                   [xid](Graph& gr, int self) {
                       const double go = gr.node(self).grad[0];
                       auto& gx = gr.grad_buf(xid);
                       for (auto& v : gx) v += go;
                   });
}

Tensor mean(const Tensor& x) {
    const auto& xv = x.value();
    require(!xv.empty(), "mean of empty tensor");
    double acc = 0.0;
    for (double v : xv) acc += v;
    const double inv = 1.0 / static_cast<double>(xv.size());
    int xid = x.id();
    return make_op(x.graph(), {1}, {acc * inv}, "mean", {xid}, x.requires_grad(),
                   [xid, inv](Graph& gr, int self) {
                       const double go = gr.node(self).grad[0] * inv;
                       auto& gx = gr.grad_buf(xid);
                       for (auto& v : gx) v += go;
                   });
}

Tensor mean_rows(const Tensor& x) {
    const auto [n, m] = as_2d(x.shape());
    const auto& xv = x.value();
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) out[j] += xv[i * m + j];
    }
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& v : out) v *= inv;
    int xid = x.id();
    return make_op(x.graph(), {m}, std::move(out), "mean_rows", {xid}, x.requires_grad(),
                   [xid, n, m, inv](Graph& gr, int self) {
                       const auto& go = gr.node(self).grad;
                       auto& gx = gr.grad_buf(xid);
                       for (std::size_t i = 0; i < n; ++i) {
                           for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += go[j] * inv;
                       }
                   });
}

// ---- shape manipulation ----

Tensor concat_lastdim(const std::vector<Tensor>& xs) {
    require(!xs.empty(), "concat_lastdim: no inputs");
    Graph* g = xs[0].graph();
    const auto [rows, c0] = as_2d(xs[0].shape());
    (void)c0;
    std::size_t total_cols = 0;
    bool needs_grad = false;
    std::vector<int> ids;
    std::vector<std::size_t> widths;
    for (const auto& x : xs) {
        require(x.graph() == g, "concat_lastdim: mixed graphs");
        const auto [r, c] = as_2d(x.shape());
        if (r != rows) shape_mismatch("concat_lastdim", xs[0].shape(), x.shape());
        total_cols += c;
        widths.push_back(c);
        ids.push_back(x.id());
        needs_grad = needs_grad || x.requires_grad();
    }
    std::vector<double> out(rows * total_cols);
    std::size_t off = 0;
    for (std::size_t t = 0; t < xs.size(); ++t) {
        const auto& xv = xs[t].value();
        const std::size_t c = widths[t];
        for (std::size_t i = 0; i < rows; ++i) {
            std::copy(xv.begin() + i * c, xv.begin() + (i + 1) * c,
                      out.begin() + i * total_cols + off);
        }
        off += c;
    }
    return make_op(g, {rows, total_cols}, std::move(out), "concat_lastdim", ids, needs_grad,
                   [ids, widths, rows, total_cols](Graph& gr, int self) {
                       const auto& go = gr.node(self).grad;
                       std::size_t off2 = 0;
                       for (std::size_t t = 0; t < ids.size(); ++t) {
                           const std::size_t c = widths[t];
                           if (gr.node(ids[t]).requires_grad) {
                               auto& gx = gr.grad_buf(ids[t]);
                               for (std::size_t i = 0; i < rows; ++i) {
                                   for (std::size_t j = 0; j < c; ++j) {
                                       gx[i * c + j] += go[i * total_cols + off2 + j];
                                   }
                               }
                           }
                           off2 += c;
                       }
                   });
}

Tensor stack_rows(const std::vector<Tensor>& xs) {
    require(!xs.empty(), "stack_rows: no inputs");
    Graph* g = xs[0].graph();
    const std::size_t m = xs[0].size();
    std::vector<int> ids;
    bool needs_grad = false;
    std::vector<double> out;
    out.reserve(xs.size() * m);
    for (const auto& x : xs) {
        require(x.graph() == g, "stack_rows: mixed graphs");
        if (x.size() != m) shape_mismatch("stack_rows", xs[0].shape(), x.shape());
        out.insert(out.end(), x.value().begin(), x.value().end());
        ids.push_back(x.id());
        needs_grad = needs_grad || x.requires_grad();
    }
    return make_op(g, {xs.size(), m}, std::move(out), "stack_rows", ids, needs_grad,
                   [ids, m](Graph& gr, int self) {
                       const auto& go = gr.node(self).grad;
                       for (std::size_t t = 0; t < ids.size(); ++t) {
                           if (!gr.node(ids[t]).requires_grad) continue;
                           auto& gx = gr.grad_buf(ids[t]);
                           for (std::size_t j = 0; j < m; ++j) gx[j] += go[t * m + j];
                       }
                   });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len) {
    const auto [n, m] = as_2d(x.shape());
    require(start + len <= m, "slice_cols: range out of bounds");
    const auto& xv = x.value();
    std::vector<double> out(n * len);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(xv.begin() + i * m + start, xv.begin() + i * m + start + len,
                  out.begin() + i * len);
    }
    int xid = x.id();
    return make_op(x.graph(), {n, len}, std::move(out), "slice_cols", {xid}, x.requires_grad(),
                   [xid, n, m, start, len](Graph& gr, int self) {
                       const auto& go = gr.node(self).grad;
                       auto& gx = gr.grad_buf(xid);
                       for (std::size_t i = 0; i < n; ++i) {
                           for (std::size_t j = 0; j < len; ++j) {
                               gx[i * m + start + j] += go[i * len + j];
                           }
                       }
                   });
}

Tensor reshape(const Tensor& x, Shape new_shape) {
    if (numel(new_shape) != x.size()) {
        throw ShapeError("reshape: element count mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(new_shape));
    }
    int xid = x.id();
    return make_op(x.graph(), std::move(new_shape), x.value(), "reshape", {xid},
                   x.requires_grad(),
                   [xid](Graph& gr, int self) {
                       const auto& go = gr.node(self).grad;
                       auto& gx = gr.grad_buf(xid);
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
                   });
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
    const auto [n, m] = as_2d(x.shape());
    for (std::size_t r : rows) {
        if (r >= n) {
            throw ValueError("gather_rows: index " + std::to_string(r) + " out of range [0," +
                             std::to_string(n) + ")");
        }
    }
    const auto& xv = x.value();
    std::vector<double> out(rows.size() * m);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy(xv.begin() + rows[i] * m, xv.begin() + (rows[i] + 1) * m, out.begin() + i * m);
    }
    int xid = x.id();
    return make_op(x.graph(), {rows.size(), m}, std::move(out), "gather_rows", {xid},
                   x.requires_grad(),
                   [xid, rows, m](Graph& gr, int self) {
                       const auto& go = gr.node(self).grad;
                       auto& gx = gr.grad_buf(xid);  // scatter-add: repeated rows accumulate
                       for (std::size_t i = 0; i < rows.size(); ++i) {
                           for (std::size_t j = 0; j < m; ++j) gx[rows[i] * m + j] += go[i * m + j];
                       }
                   });
}

Tensor select(const Tensor& x, std::size_t flat_index) {
    require(flat_index < x.size(), "select: index out of range");
    int xid = x.id();
    return make_op(x.graph(), {1}, {x.value()[flat_index]}, "select", {xid}, x.requires_grad(),
                   [xid, flat_index](Graph& gr, int self) {
                       gr.grad_buf(xid)[flat_index] += gr.node(self).grad[0];
                   });
}

// ---- masking / attention building blocks ----

Tensor masked_fill(const Tensor& x, const std::vector<std::uint8_t>& mask, double value) {
    require(mask.size() == x.size(), "masked_fill: mask size mismatch");
    const auto& xv = x.value();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = mask[i] ? value : xv[i];
    int xid = x.id();
    return make_op(x.graph(), x.shape(), std::move(out), "masked_fill", {xid}, x.requires_grad(),
                   [xid, mask](Graph& gr, int self) {
                       const auto& go = gr.node(self).grad;
                       auto& gx = gr.grad_buf(xid);
                       for (std::size_t i = 0; i < gx.size(); ++i) {
                           if (!mask[i]) gx[i] += go[i];
                       }
                   });
}

Tensor softmax_lastdim(const Tensor& x) {
    const auto [n, m] = as_2d(x.shape());
    require(m >= 1, "softmax_lastdim: empty last dimension");
    const auto& xv = x.value();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = xv.data() + i * m;
        double* orow = out.data() + i * m;
        double mx = row[0];
        for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            orow[j] = std::exp(row[j] - mx);
            denom += orow[j];
        }
        const double inv = 1.0 / denom;
        for (std::size_t j = 0; j < m; ++j) orow[j] *= inv;
    }
    int xid = x.id();
    return make_op(x.graph(), x.shape(), std::move(out), "softmax", {xid}, x.requires_grad(),
                   [xid, n, m](Graph& gr, int self) {
                       const auto& go = gr.node(self).grad;
                       const auto& y = gr.node(self).value;
                       auto& gx = gr.grad_buf(xid);
                       for (std::size_t i = 0; i < n; ++i) {
                           const double* yrow = y.data() + i * m;
                           const double* grow = go.data() + i * m;
                           double dot = 0.0;
                           for (std::size_t j = 0; j < m; ++j) dot += yrow[j] * grow[j];
                           for (std::size_t j = 0; j < m; ++j) {
                               gx[i * m + j] += yrow[j] * (grow[j] - dot);
                           }
                       }
                   });
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
    require_same_graph(x, s);
    require(s.size() == 1, "scale_by: s must be scalar");
    const double sv = s.value()[0];
    const auto& xv = x.value();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * sv;
    int xid = x.id(), sid = s.id();
    return make_op(x.graph(), x.shape(), std::move(out), "scale_by", {xid, sid},
                   any_grad({&x, &s}),
                   [xid, sid](Graph& gr, int self) {
                       const auto& go = gr.node(self).grad;
                       const auto& xv2 = gr.node(xid).value;
                       const double sv2 = gr.node(sid).value[0];
                       if (gr.node(xid).requires_grad) {
                           auto& gx = gr.grad_buf(xid);
                           for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * sv2;
                       }
                       if (gr.node(sid).requires_grad) {
                           double acc = 0.0;
                           for (std::size_t i = 0; i < go.size(); ++i) acc += go[i] * xv2[i];
                           gr.grad_buf(sid)[0] += acc;
                       }
                   });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
    const Shape& s = logits.shape();
    require(s.size() == 2, "cross_entropy: logits must be [B,V]");
    const std::size_t b = s[0], v = s[1];
    require(labels.size() == b, "cross_entropy: label count mismatch");
    for (std::size_t y : labels) {
        if (y >= v) {
            throw ValueError("cross_entropy: label " + std::to_string(y) + " out of range [0," +
                             std::to_string(v) + ")");
        }
    }
    const auto& lv = logits.value();
    // Cache row softmax for the backward pass.
    auto probs = std::make_shared<std::vector<double>>(b * v);
    double loss = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const double* row = lv.data() + i * v;
        double mx = row[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < v; ++j) denom += std::exp(row[j] - mx);
        const double logz = mx + std::log(denom);
        loss -= row[labels[i]] - logz;
        double* prow = probs->data() + i * v;
        const double inv = 1.0 / denom;
        for (std::size_t j = 0; j < v; ++j) prow[j] = std::exp(row[j] - mx) * inv;
    }
    loss /= static_cast<double>(b);
    int lid = logits.id();
    return make_op(logits.graph(), {1}, {loss}, "cross_entropy", {lid}, logits.requires_grad(),
                   [lid, labels, probs, b, v](Graph& gr, int self) {
                       const double go = gr.node(self).grad[0];
                       auto& gx = gr.grad_buf(lid);
                       const double invb = 1.0 / static_cast<double>(b);
                       for (std::size_t i = 0; i < b; ++i) {
                           const double* prow = probs->data() + i * v;
                           for (std::size_t j = 0; j < v; ++j) {
                               double d = prow[j];
                               if (j == labels[i]) d -= 1.0;
                               gx[i * v + j] += go * d * invb;
                           }
                       }
                   });
}

Tensor detach(const Tensor& x) {
    // Fresh constant node: forward values identical, no edge back to x.
    return x.graph()->handle(
        x.graph()->add_node(x.shape(), x.value(), false, "detach", {}, nullptr));
}

}  // namespace elastic
