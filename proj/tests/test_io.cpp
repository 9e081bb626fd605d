// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "elastic/checkpoint.hpp"
#include "elastic/config.hpp"

using namespace elastic;
namespace fs = std::filesystem;

TEST_CASE("checkpoint round trip is bit exact") {
    Rng rng(61);
    Checkpoint ckpt;
    ParamStore store;
    store.add("emb.weight", {3, 4}, rng.uniform_vec(12, -1e9, 1e9));
    store.add("layer0/w:q", {2, 2}, {0.0, -0.0, 1e-308, 1.7976931348623157e308});
    ckpt.sections["backbone"] = store;
    ckpt.extra_json = R"({"note":"test"})";

    const std::string dir = (fs::temp_directory_path() / "elastic_ckpt_test").string();
    fs::remove_all(dir);
    save_checkpoint(dir, ckpt);
    Checkpoint loaded = load_checkpoint(dir);

    const auto& got = loaded.sections.at("backbone");
    REQUIRE(got.entries().size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(got.entries()[i].name == store.entries()[i].name);
        CHECK(got.entries()[i].shape == store.entries()[i].shape);
        CHECK(got.entries()[i].value == store.entries()[i].value);
    }
    CHECK(params_fingerprint(got) == params_fingerprint(store));
    CHECK(loaded.optimizer == "adamw");
    fs::remove_all(dir);
}

TEST_CASE("checkpoint loading errors") {
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/path"), IoError);
}

TEST_CASE("config defaults mirror the scaled-down table") {
    RunConfig c = RunConfig::from_json_text("{}");
    CHECK(c.sink == 4);
    CHECK(c.window == 32);
    CHECK(c.block_size == 4);
    CHECK(c.train.warmup_ratio == 0.2);
    CHECK(c.train.router_lr == 5e-4);
    CHECK(c.train.reg_lr == 1e-3);
    CHECK(c.schedule.decay == 0.6);
    CHECK(c.train.t_robust == 1.0);
    CHECK(c.train.t_sensitive == 0.7);
    CHECK(c.model.layers == 2);
    CHECK(c.model.heads == 4);
    CHECK(c.model.head_dim == 16);
    CHECK(c.model.vocab == 64);
}

TEST_CASE("config validation messages") {
    auto throws_with = [](const std::string& text, const std::string& needle) {
        try {
            RunConfig::from_json_text(text);
            FAIL_CHECK("expected ConfigError for ", text);
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
        }
    };
    throws_with(R"({"pattern":{"window":0}})", "window");
    throws_with(R"({"pattern":{"kind":"exotic"}})", "kind");
    throws_with(R"({"pattern":{"mass_threshold":1.5}})", "mass_threshold");
    throws_with(R"({"model":{"vocab":8}})", "vocab");
    throws_with(R"({"router":{"n_edge":0}})", "n_edge");
    throws_with(R"({"train":{"warmup_ratio":1.0}})", "warmup_ratio");
    throws_with(R"({"train":{"t_sensitive":0.0}})", "targets");
    throws_with("{invalid", "parse");
}

TEST_CASE("config round trips through its own json") {
    RunConfig a = RunConfig::defaults();
    RunConfig b = RunConfig::from_json_text(a.to_json_text());
    CHECK(a.to_json_text() == b.to_json_text());
    // overriding one field keeps the rest
    RunConfig c = RunConfig::from_json_text(R"({"train":{"steps":123}})");
    CHECK(c.train.steps == 123);
    CHECK(c.train.router_lr == a.train.router_lr);
}

TEST_CASE("f64 files store little-endian doubles") {
    const std::string path = (fs::temp_directory_path() / "elastic_f64_test.bin").string();
    write_f64_file(path, {1.0});
    std::ifstream f(path, std::ios::binary);
    unsigned char buf[8];
    f.read(reinterpret_cast<char*>(buf), 8);
    // IEEE-754 double 1.0 is 0x3FF0000000000000; little-endian puts 0x3F last
    CHECK(buf[0] == 0x00);
    CHECK(buf[6] == 0xF0);
    CHECK(buf[7] == 0x3F);
    CHECK(read_f64_file(path, 1) == std::vector<double>{1.0});
    CHECK_THROWS_AS(read_f64_file(path, 2), IoError);  // short file
    fs::remove(path);
}
