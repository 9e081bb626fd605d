// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#include "elastic/config.hpp"

#include <fstream>

#include "json.hpp"

namespace elastic {

using nlohmann::json;

SparsityPattern RunConfig::sa_pattern() const {
    if (pattern_kind == "streaming") return SparsityPattern::streaming(sink, window);
    if (pattern_kind == "block_sparse") return SparsityPattern::block_sparse(block_size, mass_threshold);
    throw ConfigError("pattern.kind must be 'streaming' or 'block_sparse', got '" + pattern_kind +
                      "'");
}

std::vector<TaskSpec> RunConfig::task_specs() const {
    TaskSpec needle = TaskSpec::needle(needle_seq_len, n_edge, derive_seed(seed, "task-needle"));
    TaskSpec local = TaskSpec::local(local_seq_len, local_window, window,
                                     derive_seed(seed, "task-local"));
    local.local_alphabet = local_alphabet;
    return {needle, local};
}

RunConfig RunConfig::defaults() { return RunConfig{}; }

namespace {

template <class T>
void read_field(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config field '") + key + "': " + e.what());
    }
}

void validate(const RunConfig& c) {
    auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
    if (c.model.layers == 0) fail("model.layers must be >= 1");
    if (c.model.heads == 0) fail("model.heads must be >= 1");
    if (c.model.head_dim == 0) fail("model.head_dim must be >= 1");
    if (c.model.vocab < 64) fail("model.vocab must be >= 64 (task token layout)");
    if (c.model.max_seq < c.needle_seq_len || c.model.max_seq < c.local_seq_len) {
        fail("model.max_seq must cover the task sequence lengths");
    }
    if (c.pattern_kind != "streaming" && c.pattern_kind != "block_sparse") {
        fail("pattern.kind must be 'streaming' or 'block_sparse'");
    }
    if (c.window == 0) fail("pattern.window must be >= 1 (a query must attend itself)");
    if (!(c.mass_threshold > 0.0 && c.mass_threshold <= 1.0)) {
        fail("pattern.mass_threshold must be in (0,1]");
    }
    if (c.block_size == 0) fail("pattern.block_size must be >= 1");
    if (c.n_edge == 0) fail("router.n_edge must be >= 1");
    if (c.hidden_mult == 0) fail("router.hidden_mult must be >= 1");
    if (!(c.schedule.tau_init > 0.0) || !(c.schedule.tau_min > 0.0)) {
        fail("router.tau_init and tau_min must be > 0");
    }
    if (c.schedule.tau_min > c.schedule.tau_init) fail("router.tau_min must be <= tau_init");
    if (c.schedule.decay < 0.0) fail("router.tau_decay must be >= 0");
    if (c.needle_seq_len < 2 * c.n_edge + 4) {
        fail("tasks.needle_seq_len too short for the boundary margin");
    }
    if (c.local_seq_len < c.window) fail("tasks.local_seq_len must be >= pattern.window");
    if (c.local_window == 0) fail("tasks.local_window must be >= 1");
    if (c.local_alphabet < 2 || c.local_alphabet > c.model.vocab) {
        fail("tasks.local_alphabet must be in [2, model.vocab]");
    }
    if (c.local_window > c.window) fail("tasks.local_window must be <= pattern.window");
    if (c.pretrain.batch == 0 || c.train.batch == 0) fail("batch sizes must be >= 1");
    if (c.pretrain.max_steps == 0 || c.train.steps == 0) fail("step counts must be >= 1");
    if (!(c.pretrain.accuracy_floor > 0.0 && c.pretrain.accuracy_floor <= 1.0)) {
        fail("pretrain.floor must be in (0,1]");
    }
    if (c.pretrain.eval_every == 0) fail("pretrain.eval_every must be >= 1");
    if (!(c.train.router_lr > 0.0) || !(c.train.reg_lr > 0.0) || !(c.pretrain.lr > 0.0)) {
        fail("learning rates must be > 0");
    }
    if (c.train.warmup_ratio < 0.0 || c.train.warmup_ratio >= 1.0) {
        fail("train.warmup_ratio must be in [0,1)");
    }
    if (!(c.train.t_robust > 0.0 && c.train.t_robust <= 1.0) ||
        !(c.train.t_sensitive > 0.0 && c.train.t_sensitive <= 1.0)) {
        fail("targets must be in (0,1]");
    }
    if (c.train.lambda_init_max < 0.0) fail("train.lambda_init_max must be >= 0");
    if (c.eval_examples == 0) fail("eval.examples must be >= 1");
    if (c.bench_seq_lens.empty()) fail("bench.seq_lens must not be empty");
    if (c.bench_heads == 0 || c.bench_head_dim == 0) fail("bench dims must be >= 1");
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    RunConfig c = defaults();
    if (j.contains("model")) {
        const auto& m = j["model"];
        read_field(m, "layers", c.model.layers);
        read_field(m, "heads", c.model.heads);
        read_field(m, "head_dim", c.model.head_dim);
        read_field(m, "vocab", c.model.vocab);
        read_field(m, "max_seq", c.model.max_seq);
        read_field(m, "ffn_hidden", c.model.ffn_hidden);
    }
    if (j.contains("pattern")) {
        const auto& p = j["pattern"];
        read_field(p, "kind", c.pattern_kind);
        read_field(p, "sink", c.sink);
        read_field(p, "window", c.window);
        read_field(p, "block_size", c.block_size);
        read_field(p, "mass_threshold", c.mass_threshold);
    }
    if (j.contains("router")) {
        const auto& r = j["router"];
        read_field(r, "n_edge", c.n_edge);
        read_field(r, "hidden_mult", c.hidden_mult);
        read_field(r, "tau_init", c.schedule.tau_init);
        read_field(r, "tau_min", c.schedule.tau_min);
        read_field(r, "tau_decay", c.schedule.decay);
    }
    if (j.contains("tasks")) {
        const auto& t = j["tasks"];
        read_field(t, "needle_seq_len", c.needle_seq_len);
        read_field(t, "local_seq_len", c.local_seq_len);
        read_field(t, "local_window", c.local_window);
        read_field(t, "local_alphabet", c.local_alphabet);
    }
    if (j.contains("pretrain")) {
        const auto& p = j["pretrain"];
        read_field(p, "steps", c.pretrain.max_steps);
        read_field(p, "batch", c.pretrain.batch);
        read_field(p, "lr", c.pretrain.lr);
        read_field(p, "warmup_ratio", c.pretrain.warmup_ratio);
        read_field(p, "weight_decay", c.pretrain.weight_decay);
        read_field(p, "eval_every", c.pretrain.eval_every);
        read_field(p, "eval_examples", c.pretrain.eval_examples);
        read_field(p, "floor", c.pretrain.accuracy_floor);
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        read_field(t, "steps", c.train.steps);
        read_field(t, "batch", c.train.batch);
        read_field(t, "router_lr", c.train.router_lr);
        read_field(t, "reg_lr", c.train.reg_lr);
        read_field(t, "warmup_ratio", c.train.warmup_ratio);
        read_field(t, "weight_decay", c.train.weight_decay);
        read_field(t, "lambda_init_max", c.train.lambda_init_max);
        read_field(t, "t_robust", c.train.t_robust);
        read_field(t, "t_sensitive", c.train.t_sensitive);
    }
    if (j.contains("eval")) read_field(j["eval"], "examples", c.eval_examples);
    if (j.contains("bench")) {
        const auto& b = j["bench"];
        read_field(b, "seq_lens", c.bench_seq_lens);
        read_field(b, "heads", c.bench_heads);
        read_field(b, "head_dim", c.bench_head_dim);
    }
    read_field(j, "seed", c.seed);

    validate(c);
    // derived wiring
    c.pretrain.seed = derive_seed(c.seed, "pretrain");
    c.train.seed = derive_seed(c.seed, "train-router");
    c.train.schedule = c.schedule;
    c.train.sa_pattern = c.sa_pattern();
    c.train.n_edge = c.n_edge;
    return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return from_json_text(text);
}

std::string RunConfig::to_json_text() const {
    json j;
    j["model"] = {{"layers", model.layers},   {"heads", model.heads},
                  {"head_dim", model.head_dim}, {"vocab", model.vocab},
                  {"max_seq", model.max_seq}, {"ffn_hidden", model.ffn_hidden}};
    j["pattern"] = {{"kind", pattern_kind},
                    {"sink", sink},
                    {"window", window},
                    {"block_size", block_size},
                    {"mass_threshold", mass_threshold}};
    j["router"] = {{"n_edge", n_edge},
                   {"hidden_mult", hidden_mult},
                   {"tau_init", schedule.tau_init},
                   {"tau_min", schedule.tau_min},
                   {"tau_decay", schedule.decay}};
    j["tasks"] = {{"needle_seq_len", needle_seq_len},
                  {"local_seq_len", local_seq_len},
                  {"local_window", local_window},
                  {"local_alphabet", local_alphabet}};
    j["pretrain"] = {{"steps", pretrain.max_steps},
                     {"batch", pretrain.batch},
                     {"lr", pretrain.lr},
                     {"warmup_ratio", pretrain.warmup_ratio},
                     {"weight_decay", pretrain.weight_decay},
                     {"eval_every", pretrain.eval_every},
                     {"eval_examples", pretrain.eval_examples},
                     {"floor", pretrain.accuracy_floor}};
    j["train"] = {{"steps", train.steps},
                  {"batch", train.batch},
                  {"router_lr", train.router_lr},
                  {"reg_lr", train.reg_lr},
                  {"warmup_ratio", train.warmup_ratio},
                  {"weight_decay", train.weight_decay},
                  {"lambda_init_max", train.lambda_init_max},
                  {"t_robust", train.t_robust},
                  {"t_sensitive", train.t_sensitive}};
    j["eval"] = {{"examples", eval_examples}};
    j["bench"] = {{"seq_lens", bench_seq_lens}, {"heads", bench_heads}, {"head_dim", bench_head_dim}};
    j["seed"] = seed;
    return j.dump(2);
}

}  // namespace elastic
