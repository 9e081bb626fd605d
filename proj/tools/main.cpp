// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "elastic/analysis.hpp"
#include "elastic/checkpoint.hpp"
#include "elastic/config.hpp"
#include "elastic/dispatch.hpp"
#include "elastic/gradcheck.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace elastic;

namespace {

// exit codes: 0 ok, 1 internal, 2 config, 3 io/checkpoint, 4 numeric abort
constexpr int kExitInternal = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

struct CommonOpts {
    std::string config_path;
    std::string out_dir = "out";
    std::string checkpoint;
    std::int64_t seed_override = -1;
};

RunConfig load_config(const CommonOpts& opts) {
    RunConfig cfg = opts.config_path.empty() ? RunConfig::defaults()
                                             : RunConfig::from_file(opts.config_path);
    if (opts.seed_override >= 0) {
        // re-derive the per-phase seeds from the override
        json j = json::parse(cfg.to_json_text());
        j["seed"] = static_cast<std::uint64_t>(opts.seed_override);
        cfg = RunConfig::from_json_text(j.dump());
    }
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
}

Backbone backbone_from_checkpoint(const std::string& dir, const RunConfig& cfg) {
    Checkpoint ckpt = load_checkpoint(dir);
    auto it = ckpt.sections.find("backbone");
    if (it == ckpt.sections.end()) throw IoError("checkpoint has no backbone section: " + dir);
    Backbone model;
    model.dims = cfg.model;
    model.params = std::move(it->second);
    return model;
}

RouterStack router_from_checkpoint(const std::string& dir, const RunConfig& cfg) {
    Checkpoint ckpt = load_checkpoint(dir);
    auto it = ckpt.sections.find("router");
    if (it == ckpt.sections.end()) throw IoError("checkpoint has no router section: " + dir);
    RouterStack router;
    router.cfg.heads = cfg.model.heads;
    router.cfg.head_dim = cfg.model.head_dim;
    router.cfg.hidden_mult = cfg.hidden_mult;
    router.cfg.n_edge = cfg.n_edge;
    router.layers = cfg.model.layers;
    router.params = std::move(it->second);
    return router;
}

int cmd_pretrain(const CommonOpts& opts) {
    RunConfig cfg = load_config(opts);
    Backbone model = Backbone::init(cfg.model, derive_seed(cfg.seed, "backbone-init"));
    std::vector<std::string> log_lines;
    PretrainOutcome outcome = pretrain_backbone(model, cfg.task_specs(), cfg.pretrain, &log_lines);

    const fs::path out(opts.out_dir);
    std::string log_text;
    for (const auto& l : log_lines) log_text += l + "\n";
    write_text(out / "pretrain_log.txt", log_text);

    Checkpoint ckpt;
    ckpt.sections["backbone"] = model.params;
    json extra;
    extra["config"] = json::parse(cfg.to_json_text());
    extra["pretrain_steps"] = outcome.steps_run;
    extra["accuracy"] = outcome.final_accuracy;
    ckpt.extra_json = extra.dump();
    save_checkpoint((out / "backbone_ckpt").string(), ckpt);

    std::printf("pretrain: done in %zu steps;", outcome.steps_run);
    const auto specs = cfg.task_specs();
    for (std::size_t i = 0; i < specs.size(); ++i) {
        std::printf(" %s accuracy %.3f", specs[i].name.c_str(), outcome.final_accuracy[i]);
    }
    std::printf("\ncheckpoint: %s\n", (out / "backbone_ckpt").string().c_str());
    return 0;
}

int cmd_train_router(const CommonOpts& opts) {
    RunConfig cfg = load_config(opts);
    if (opts.checkpoint.empty()) throw IoError("train-router requires --checkpoint (backbone)");
    Backbone model = backbone_from_checkpoint(opts.checkpoint, cfg);

    RouterConfig rc;
    rc.heads = cfg.model.heads;
    rc.head_dim = cfg.model.head_dim;
    rc.hidden_mult = cfg.hidden_mult;
    rc.n_edge = cfg.n_edge;
    RouterStack router = RouterStack::init(cfg.model.layers, rc, derive_seed(cfg.seed, "router-init"));

    TrainRunResult res = train_router(model, router, cfg.task_specs(), cfg.train);

    const fs::path out(opts.out_dir);
    std::string log_text;
    for (const auto& rec : res.log) log_text += metrics_jsonl(rec) + "\n";
    write_text(out / "train_log.jsonl", log_text);

    Checkpoint ckpt;
    ckpt.sections["backbone"] = model.params;
    ckpt.sections["router"] = router.params;
    json extra;
    extra["config"] = json::parse(cfg.to_json_text());
    json lambdas = json::object();
    for (const auto& [task, lp] : res.state.lambdas) {
        lambdas[task] = {{"lambda1", lp.l1}, {"lambda2", lp.l2}};
    }
    extra["lambdas"] = lambdas;
    extra["targets"] = res.state.targets;
    ckpt.extra_json = extra.dump();
    save_checkpoint((out / "router_ckpt").string(), ckpt);

    double final_msr[2] = {0.0, 0.0};
    std::size_t counts[2] = {0, 0};
    const std::size_t tail = std::min<std::size_t>(res.log.size(), 50);
    for (std::size_t i = res.log.size() - tail; i < res.log.size(); ++i) {
        const int idx = res.log[i].task_id == "needle" ? 0 : 1;
        final_msr[idx] += res.log[i].msr;
        counts[idx] += 1;
    }
    std::printf("train-router: %zu steps; trailing msr needle %.3f local %.3f\n", res.log.size(),
                counts[0] ? final_msr[0] / counts[0] : 0.0,
                counts[1] ? final_msr[1] / counts[1] : 0.0);
    std::printf("log: %s\ncheckpoint: %s\n", (out / "train_log.jsonl").string().c_str(),
                (out / "router_ckpt").string().c_str());
    return 0;
}

int cmd_eval(const CommonOpts& opts, bool with_router) {
    RunConfig cfg = load_config(opts);
    if (opts.checkpoint.empty()) throw IoError("eval requires --checkpoint");
    Backbone model = backbone_from_checkpoint(opts.checkpoint, cfg);

    RouterStack router;
    EvalRouting routing;
    routing.sa_pattern = cfg.sa_pattern();
    routing.n_edge = cfg.n_edge;
    if (with_router) {
        router = router_from_checkpoint(opts.checkpoint, cfg);
        routing.router = &router;
    } else {
        routing.fixed_modes.assign(cfg.model.layers * cfg.model.heads, HeadMode::FA);
    }

    json report;
    for (const auto& spec : cfg.task_specs()) {
        const double acc = task_accuracy(model, spec, routing, cfg.eval_examples);
        // mean hard sparsity over eval examples
        double msr = 0.0, esr = 0.0;
        for (std::size_t e = 0; e < cfg.eval_examples; ++e) {
            Example ex = gen_example(spec, "eval", e);
            EvalResult r = eval_forward(model, ex.tokens, routing);
            msr += compute_msr_hard(r.modes);
            esr += compute_esr(r.modes, routing.sa_pattern, ex.tokens.size());
        }
        msr /= static_cast<double>(cfg.eval_examples);
        esr /= static_cast<double>(cfg.eval_examples);
        report[spec.name] = {{"accuracy", acc},
                             {"msr", msr},
                             {"esr", esr},
                             {"regime", regime_name(spec.regime)}};
        std::printf("eval %-8s accuracy %.3f  msr %.3f  esr %.3f\n", spec.name.c_str(), acc, msr,
                    esr);
    }
    write_text(fs::path(opts.out_dir) / "eval_report.json", report.dump(2) + "\n");
    return 0;
}

int cmd_gradcheck(const CommonOpts& opts) {
    RunConfig cfg = load_config(opts);
    auto results = run_op_gradchecks(derive_seed(cfg.seed, "gradcheck"), 20);
    bool all_pass = true;
    json rows = json::array();
    for (const auto& r : results) {
        all_pass = all_pass && r.pass;
        std::printf("%-26s max_rel_err %.3e  tol %.0e  %s\n", r.name.c_str(), r.max_rel_err, r.tol,
                    r.pass ? "pass" : "FAIL");
        rows.push_back({{"name", r.name}, {"max_rel_err", r.max_rel_err}, {"tol", r.tol},
                        {"pass", r.pass}});
    }
    write_text(fs::path(opts.out_dir) / "gradcheck.json", rows.dump(2) + "\n");
    std::printf("gradcheck: %s\n", all_pass ? "all ops pass" : "FAILURES");
    return all_pass ? 0 : kExitNumeric;
}

int cmd_bench_dispatch(const CommonOpts& opts) {
    RunConfig cfg = load_config(opts);
    json rows = json::array();
    std::printf("%8s %6s | %12s %8s | %12s %8s\n", "seq", "heads", "serial_ms", "allocs",
                "unified_ms", "allocs");
    for (std::size_t s : cfg.bench_seq_lens) {
        LayerInputs in;
        in.s = s;
        in.d = cfg.bench_head_dim;
        Rng rng(derive_seed(cfg.seed, "bench", s));
        std::vector<HeadMode> modes(cfg.bench_heads);
        for (std::size_t h = 0; h < cfg.bench_heads; ++h) {
            modes[h] = (h % 2 == 0) ? HeadMode::SA : HeadMode::FA;
            in.q.push_back(rng.uniform_vec(s * in.d, -1.0, 1.0));
            in.k.push_back(rng.uniform_vec(s * in.d, -1.0, 1.0));
            in.v.push_back(rng.uniform_vec(s * in.d, -1.0, 1.0));
        }
        const SparsityPattern pat = cfg.sa_pattern();
        using clock = std::chrono::steady_clock;

        DispatchStats ser_stats;
        auto t0 = clock::now();
        auto ser = serial_dispatch(in, modes, pat, &ser_stats);
        auto t1 = clock::now();
        DispatchStats uni_stats;
        auto uni = unified_dispatch(in, modes, pat, &uni_stats);
        auto t2 = clock::now();

        bool identical = ser == uni;
        const double ser_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        const double uni_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
        std::printf("%8zu %6zu | %12.2f %8zu | %12.2f %8zu  %s\n", s, cfg.bench_heads, ser_ms,
                    ser_stats.alloc_count, uni_ms, uni_stats.alloc_count,
                    identical ? "outputs identical" : "OUTPUT MISMATCH");
        rows.push_back({{"seq_len", s},
                        {"heads", cfg.bench_heads},
                        {"serial_ms", ser_ms},
                        {"serial_allocs", ser_stats.alloc_count},
                        {"serial_alloc_doubles", ser_stats.alloc_doubles},
                        {"unified_ms", uni_ms},
                        {"unified_allocs", uni_stats.alloc_count},
                        {"unified_alloc_doubles", uni_stats.alloc_doubles},
                        {"outputs_identical", identical}});
        if (!identical) {
            write_text(fs::path(opts.out_dir) / "bench_dispatch.json", rows.dump(2) + "\n");
            return kExitNumeric;
        }
    }
    write_text(fs::path(opts.out_dir) / "bench_dispatch.json", rows.dump(2) + "\n");
    return 0;
}

int cmd_analyze(const CommonOpts& opts, const std::string& which) {
    RunConfig cfg = load_config(opts);
    if (opts.checkpoint.empty()) throw IoError("analyze requires --checkpoint");
    Backbone model = backbone_from_checkpoint(opts.checkpoint, cfg);
    const fs::path out(opts.out_dir);
    const auto specs = cfg.task_specs();

    if (which == "retrieval") {
        HeadScoreTable table = retrieval_score(model, specs[0], cfg.eval_examples);
        std::string csv = "layer,head,score,rank\n";
        char buf[96];
        for (std::size_t l = 0; l < table.layers; ++l) {
            for (std::size_t h = 0; h < table.heads; ++h) {
                const std::size_t i = l * table.heads + h;
                std::snprintf(buf, sizeof(buf), "%zu,%zu,%.17g,%zu\n", l, h, table.score[i],
                              table.rank[i]);
                csv += buf;
            }
        }
        write_text(out / "retrieval_scores.csv", csv);
        std::printf("retrieval scores written to %s\n", (out / "retrieval_scores.csv").c_str());
        return 0;
    }
    if (which == "sparsify") {
        HeadScoreTable table = retrieval_score(model, specs[0], cfg.eval_examples);
        const std::vector<double> grid{0.0, 0.25, 0.5, 0.75, 1.0};
        auto curve = progressive_sparsify(model, table, grid, specs, cfg.sa_pattern(),
                                          cfg.eval_examples, cfg.n_edge);
        std::string csv = "omega_msr,task,accuracy\n";
        char buf[96];
        for (const auto& p : curve) {
            std::snprintf(buf, sizeof(buf), "%.4f,%s,%.17g\n", p.omega_msr, p.task.c_str(),
                          p.accuracy);
            csv += buf;
            std::printf("omega %.2f  %-8s accuracy %.3f\n", p.omega_msr, p.task.c_str(),
                        p.accuracy);
        }
        write_text(out / "sparsify_curve.csv", csv);
        return 0;
    }
    // the remaining analyses need a trained router
    RouterStack router = router_from_checkpoint(opts.checkpoint, cfg);
    if (which == "heatmap") {
        auto hm = head_activation_heatmap(model, router, specs, cfg.sa_pattern(), cfg.n_edge,
                                          cfg.eval_examples);
        std::string csv = "layer,head,task,fa_frequency\n";
        char buf[96];
        for (std::size_t t = 0; t < hm.tasks.size(); ++t) {
            for (std::size_t l = 0; l < hm.layers; ++l) {
                for (std::size_t h = 0; h < hm.heads; ++h) {
                    std::snprintf(buf, sizeof(buf), "%zu,%zu,%s,%.17g\n", l, h,
                                  hm.tasks[t].c_str(), hm.fa_frequency[t][l * hm.heads + h]);
                    csv += buf;
                }
            }
        }
        write_text(out / "head_heatmap.csv", csv);
        json cons = {{"always_fa", hm.always_fa}, {"always_sa", hm.always_sa}};
        write_text(out / "head_consistency.json", cons.dump(2) + "\n");
        std::printf("heatmap: %zu always-FA heads, %zu always-SA heads\n", hm.always_fa.size(),
                    hm.always_sa.size());
        return 0;
    }
    if (which == "similarity") {
        auto sim = task_similarity(model, router, specs, cfg.sa_pattern(), cfg.n_edge,
                                   cfg.eval_examples, 0);
        json j;
        j["tasks"] = sim.tasks;
        j["m_before"] = sim.m_before;
        j["m_after"] = sim.m_after;
        j["mean_offdiag_before"] = sim.mean_offdiag_before;
        j["mean_offdiag_after"] = sim.mean_offdiag_after;
        j["note"] = "activations are zero-centered over each pair union before rescaling";
        write_text(out / "task_similarity.json", j.dump(2) + "\n");
        std::printf("similarity: mean |M| before %.4f after %.4f\n", sim.mean_offdiag_before,
                    sim.mean_offdiag_after);
        return 0;
    }
    throw ConfigError("unknown analysis '" + which +
                      "' (expected heatmap|retrieval|sparsify|similarity)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"elastic-attn: adaptive per-head attention sparsity, desk scale"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string analyze_which;
    bool eval_no_router = false;

    auto add_common = [&](CLI::App* sub, bool needs_ckpt) {
        sub->add_option("--config", opts.config_path, "JSON config file (defaults when omitted)");
        sub->add_option("--out", opts.out_dir, "output directory")->capture_default_str();
        sub->add_option("--seed", opts.seed_override, "seed override");
        if (needs_ckpt) sub->add_option("--checkpoint", opts.checkpoint, "checkpoint directory");
    };

    add_common(app.add_subcommand("pretrain", "train the frozen toy backbone (all full attention)"),
               false);
    add_common(app.add_subcommand("train-router", "train the attention router on a frozen backbone"),
               true);
    auto* ev = app.add_subcommand("eval", "evaluate tasks, head sparsity and effective sparsity");
    add_common(ev, true);
    ev->add_flag("--no-router", eval_no_router, "evaluate the raw backbone (all full attention)");
    auto* an = app.add_subcommand("analyze", "routing analyses and exports");
    add_common(an, true);
    an->add_option("which", analyze_which, "heatmap|retrieval|sparsify|similarity")->required();
    add_common(app.add_subcommand("gradcheck", "finite-difference checks for every registered op"),
               false);
    add_common(app.add_subcommand("bench-dispatch", "serial vs unified dispatch comparison"),
               false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("pretrain")) return cmd_pretrain(opts);
        if (app.got_subcommand("train-router")) return cmd_train_router(opts);
        if (app.got_subcommand("eval")) return cmd_eval(opts, !eval_no_router);
        if (app.got_subcommand("analyze")) return cmd_analyze(opts, analyze_which);
        if (app.got_subcommand("gradcheck")) return cmd_gradcheck(opts);
        if (app.got_subcommand("bench-dispatch")) return cmd_bench_dispatch(opts);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kExitIo;
    } catch (const TrainAbort& e) {
        std::fprintf(stderr, "training aborted: %s\ndiagnostic: %s\n", e.what(),
                     e.diagnostic.c_str());
        return kExitNumeric;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInternal;
    }
    return kExitInternal;
}
