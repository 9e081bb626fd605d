// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#include "elastic/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "elastic/optim.hpp"

namespace elastic {

namespace {

// Token range layout (vocab >= 64).
constexpr std::size_t kFillerLo = 0, kFillerHi = 32;
constexpr std::size_t kValueLo = 32, kValueHi = 48;
constexpr std::size_t kKeyLo = 48, kKeyHi = 63;
constexpr std::size_t kQueryMark = 63;
constexpr std::size_t kLocalClasses = 8;

std::size_t draw_range(Rng& rng, std::size_t lo, std::size_t hi) {
    return lo + rng.uniform_int(hi - lo);
}

}  // namespace

const char* regime_name(Regime r) { return r == Regime::Sensitive ? "sensitive" : "robust"; }

TaskSpec TaskSpec::needle(std::size_t seq_len, std::size_t n_edge, std::uint64_t seed) {
    TaskSpec s;
    s.name = "needle";
    s.kind = Kind::NeedleRetrieval;
    s.regime = Regime::Sensitive;
    s.seq_len_min = s.seq_len_max = seq_len;
    s.n_edge = n_edge;
    s.seed = seed;
    return s;
}

TaskSpec TaskSpec::local(std::size_t seq_len, std::size_t window, std::size_t min_window,
                         std::uint64_t seed) {
    TaskSpec s;
    s.name = "local";
    s.kind = Kind::LocalAggregate;
    s.regime = Regime::Robust;
    s.seq_len_min = s.seq_len_max = seq_len;
    s.local_window = window;
    s.min_window = min_window;
    s.seed = seed;
    return s;
}

Example gen_example(const TaskSpec& spec, const char* stream, std::uint64_t index) {
    Rng rng(derive_seed(derive_seed(spec.seed, spec.name), stream, index));
    const std::size_t s = spec.seq_len_min == spec.seq_len_max
                              ? spec.seq_len_min
                              : spec.seq_len_min +
                                    rng.uniform_int(spec.seq_len_max - spec.seq_len_min + 1);
    if (spec.vocab < 64) throw ValueError("task vocab must be >= 64");

    Example ex;
    ex.tokens.resize(s);
    ex.labels.assign(s, -1);

    if (spec.kind == TaskSpec::Kind::NeedleRetrieval) {
        if (s < 8) throw ValueError("needle task: seq_len must be >= 8");
        // Plant (key, value) uniformly outside the first/last n_edge tokens;
        // the tail repeats the key so the query is visible at the boundary.
        if (s < 2 * spec.n_edge + 4) {
            throw ValueError("needle task: sequence too short to plant outside boundaries");
        }
        const std::size_t lo = spec.n_edge;
        const std::size_t hi = s - spec.n_edge - 2;  // p+1 must stay outside the tail boundary
        if (hi <= lo) throw ValueError("needle task: no valid plant positions");
        for (std::size_t i = 0; i < s; ++i) ex.tokens[i] = draw_range(rng, kFillerLo, kFillerHi);
        const std::size_t p = lo + rng.uniform_int(hi - lo);
        const std::size_t key = draw_range(rng, kKeyLo, kKeyHi);
        const std::size_t value = draw_range(rng, kValueLo, kValueHi);
        ex.tokens[p] = key;
        ex.tokens[p + 1] = value;
        ex.tokens[s - 2] = kQueryMark;
        ex.tokens[s - 1] = key;
        ex.labels[s - 1] = static_cast<long>(value);
        ex.needle_pos = {p, p + 1};
    } else {
        if (s < spec.min_window) {
            throw ValueError("local task: seq_len must be >= the streaming window");
        }
        const std::size_t w = spec.local_window;
        if (w < 1) throw ValueError("local task: window must be >= 1");
        if (spec.local_alphabet < 2 || spec.local_alphabet > spec.vocab) {
            throw ValueError("local task: alphabet must be in [2, vocab]");
        }
        for (std::size_t i = 0; i < s; ++i) ex.tokens[i] = rng.uniform_int(spec.local_alphabet);
        for (std::size_t i = w - 1; i < s; ++i) {
            std::size_t acc = 0;
            for (std::size_t j = i + 1 - w; j <= i; ++j) acc += ex.tokens[j];
            ex.labels[i] = static_cast<long>(acc % kLocalClasses);
        }
    }
    return ex;
}

TaskBatch make_batch(const TaskSpec& spec, const char* stream, std::uint64_t first_index,
                     std::size_t count) {
    TaskBatch b;
    b.task_id = spec.name;
    b.regime = spec.regime;
    b.examples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        b.examples.push_back(gen_example(spec, stream, first_index + i));
    }
    return b;
}

void verify_batch_labels(const TaskSpec& spec, const TaskBatch& batch) {
    for (const auto& ex : batch.examples) {
        const std::size_t s = ex.tokens.size();
        if (spec.kind == TaskSpec::Kind::NeedleRetrieval) {
            // Re-derive the pair: the unique key-range token before the tail.
            std::size_t found = 0, key_pos = 0;
            for (std::size_t i = 0; i + 2 < s; ++i) {
                if (ex.tokens[i] >= kKeyLo && ex.tokens[i] < kKeyHi) {
                    key_pos = i;
                    ++found;
                }
            }
            if (found != 1) throw ValueError("needle check: planted key not unique");
            if (ex.tokens[s - 1] != ex.tokens[key_pos]) {
                throw ValueError("needle check: tail does not repeat the key");
            }
            if (ex.labels[s - 1] != static_cast<long>(ex.tokens[key_pos + 1])) {
                throw ValueError("needle check: label is not the planted value");
            }
            for (std::size_t i = 0; i + 1 < s; ++i) {
                if (ex.labels[i] != -1) throw ValueError("needle check: stray label");
            }
        } else {
            const std::size_t w = spec.local_window;
            for (std::size_t i = 0; i < s; ++i) {
                if (i + 1 < w) {
                    if (ex.labels[i] != -1) throw ValueError("local check: label before window");
                    continue;
                }
                std::size_t acc = 0;
                for (std::size_t j = i + 1 - w; j <= i; ++j) acc += ex.tokens[j];
                if (ex.labels[i] != static_cast<long>(acc % kLocalClasses)) {
                    throw ValueError("local check: label mismatch at position " +
                                     std::to_string(i));
                }
            }
        }
    }
}

namespace {

std::vector<std::size_t> scored_positions(const Example& ex) {
    std::vector<std::size_t> pos;
    for (std::size_t i = 0; i < ex.labels.size(); ++i) {
        if (ex.labels[i] >= 0) pos.push_back(i);
    }
    return pos;
}

}  // namespace

double task_accuracy(const Backbone& model, const TaskSpec& spec, const EvalRouting& routing,
                     std::size_t n_examples, const char* stream) {
    std::size_t correct = 0, total = 0;
    const std::size_t vocab = model.dims.vocab;
    for (std::size_t e = 0; e < n_examples; ++e) {
        Example ex = gen_example(spec, stream, e);
        EvalResult res = eval_forward(model, ex.tokens, routing);
        for (std::size_t i : scored_positions(ex)) {
            const double* row = res.logits.data() + i * vocab;
            std::size_t best = 0;
            for (std::size_t j = 1; j < vocab; ++j) {
                if (row[j] > row[best]) best = j;
            }
            if (static_cast<long>(best) == ex.labels[i]) ++correct;
            ++total;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

PretrainOutcome pretrain_backbone(Backbone& model, const std::vector<TaskSpec>& specs,
                                  const PretrainConfig& cfg,
                                  std::vector<std::string>* log_lines) {
    if (specs.empty()) throw ValueError("pretrain: no task specs");
    AdamW opt(model.params.total_size(), {0.9, 0.95, 1e-8, cfg.weight_decay});
    const std::vector<HeadMode> all_fa(model.dims.layers * model.dims.heads, HeadMode::FA);
    const SparsityPattern full = SparsityPattern::full();

    EvalRouting eval_routing;
    eval_routing.fixed_modes = all_fa;
    eval_routing.sa_pattern = full;

    auto eval_all = [&]() {
        std::vector<double> acc;
        acc.reserve(specs.size());
        for (const auto& sp : specs) {
            acc.push_back(task_accuracy(model, sp, eval_routing, cfg.eval_examples, "eval"));
        }
        return acc;
    };

    PretrainOutcome out;
    for (std::size_t step = 0; step < cfg.max_steps; ++step) {
        const TaskSpec& spec = specs[step % specs.size()];
        TaskBatch batch = make_batch(spec, "train", step * cfg.batch, cfg.batch);

        Graph g;
        BoundParams bb = bind_params(g, model.params, true);
        Tensor loss;
        for (const auto& ex : batch.examples) {
            Tensor logits = forward_fixed(g, bb, model.dims, ex.tokens, all_fa, full);
            const auto pos = scored_positions(ex);
            std::vector<std::size_t> labels;
            labels.reserve(pos.size());
            for (std::size_t i : pos) labels.push_back(static_cast<std::size_t>(ex.labels[i]));
            Tensor ex_loss = cross_entropy(gather_rows(logits, pos), labels);
            loss = loss.defined() ? add(loss, ex_loss) : ex_loss;
        }
        loss = scale(loss, 1.0 / static_cast<double>(batch.examples.size()));
        const double loss_val = loss.item();
        if (!std::isfinite(loss_val)) {
            throw TrainAbort("pretrain: non-finite loss at step " + std::to_string(step),
                             "{\"step\":" + std::to_string(step) + ",\"task\":\"" + spec.name +
                                 "\"}");
        }
        g.backward(loss);
        opt.step(model.params, bb, warmup_cosine_lr(cfg.lr, step, cfg.max_steps, cfg.warmup_ratio));

        if ((step + 1) % cfg.eval_every == 0) {
            auto acc = eval_all();
            if (log_lines) {
                char buf[160];
                std::string line = "pretrain step " + std::to_string(step + 1);
                std::snprintf(buf, sizeof(buf), " loss %.4f", loss_val);
                line += buf;
                for (std::size_t i = 0; i < specs.size(); ++i) {
                    std::snprintf(buf, sizeof(buf), " %s %.3f", specs[i].name.c_str(), acc[i]);
                    line += buf;
                }
                log_lines->push_back(line);
            }
            const bool done = std::all_of(acc.begin(), acc.end(),
                                          [&](double a) { return a >= cfg.accuracy_floor; });
            if (done) {
                out.steps_run = step + 1;
                out.final_accuracy = std::move(acc);
                return out;
            }
        }
    }
    auto acc = eval_all();
    std::string detail;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        detail += (i ? ", " : "") + specs[i].name + "=" + std::to_string(acc[i]);
    }
    throw TrainAbort("pretrain: accuracy floors not reached within " +
                         std::to_string(cfg.max_steps) + " steps (" + detail + ")",
                     "{\"budget\":" + std::to_string(cfg.max_steps) + "}");
}

}  // namespace elastic
