// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "elastic/graph.hpp"

namespace elastic {

// Named flat parameter arrays. Parameters live here across training steps;
// each forward pass binds them into a fresh graph as leaves.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Shape shape;
        std::vector<double> value;
    };

    Entry& add(std::string name, Shape shape, std::vector<double> value) {
        if (index_.count(name)) throw ValueError("param '" + name + "' already exists");
        if (numel(shape) != value.size()) {
            throw ShapeError("param '" + name + "': data length does not match shape");
        }
        index_[name] = entries_.size();
        entries_.push_back(Entry{std::move(name), std::move(shape), std::move(value)});
        return entries_.back();
    }

    Entry& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ValueError("unknown param '" + name + "'");
        return entries_[it->second];
    }
    const Entry& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ValueError("unknown param '" + name + "'");
        return entries_[it->second];
    }
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ValueError("unknown param '" + name + "'");
        return it->second;
    }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.value.size();
        return n;
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Per-graph binding of a ParamStore: leaves_[i] corresponds to entries()[i].
struct BoundParams {
    const ParamStore* store = nullptr;
    std::vector<Tensor> leaves;

    const Tensor& get(const std::string& name) const { return leaves[store->index_of(name)]; }
};

inline BoundParams bind_params(Graph& g, const ParamStore& store, bool requires_grad) {
    BoundParams bp;
    bp.store = &store;
    bp.leaves.reserve(store.entries().size());
    for (const auto& e : store.entries()) {
        bp.leaves.push_back(g.leaf(e.shape, e.value, requires_grad));
    }
    return bp;
}

}  // namespace elastic
