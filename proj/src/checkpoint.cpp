// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#include "elastic/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace elastic {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void store_le_u64(std::uint64_t bits, unsigned char* out) {
    for (int b = 0; b < 8; ++b) out[b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
}

std::uint64_t load_le_u64(const unsigned char* in) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(in[b]) << (8 * b);
    return bits;
}

std::string sanitize(const std::string& name) {
    std::string s = name;
    for (char& c : s) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')) c = '_';
    }
    return s;
}

}  // namespace

void write_f64_file(const std::string& path, const std::vector<double>& data) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    std::vector<unsigned char> buf(data.size() * 8);
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, &data[i], 8);
        store_le_u64(bits, buf.data() + i * 8);
    }
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("write failed: " + path);
}

std::vector<double> read_f64_file(const std::string& path, std::size_t expected_count) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::vector<unsigned char> buf(expected_count * 8);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(f.gcount()) != buf.size()) {
        throw IoError("short read (" + std::to_string(f.gcount()) + " of " +
                      std::to_string(buf.size()) + " bytes): " + path);
    }
    std::vector<double> data(expected_count);
    for (std::size_t i = 0; i < expected_count; ++i) {
        const std::uint64_t bits = load_le_u64(buf.data() + i * 8);
        std::memcpy(&data[i], &bits, 8);
    }
    return data;
}

void save_checkpoint(const std::string& dir, const Checkpoint& ckpt) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create checkpoint dir " + dir + ": " + ec.message());

    json manifest;
    manifest["format"] = "elastic-ckpt-v1";
    manifest["optimizer"] = ckpt.optimizer;
    manifest["extra"] = json::parse(ckpt.extra_json);
    json sections = json::object();
    for (const auto& [sec_name, store] : ckpt.sections) {
        json params = json::array();
        std::size_t idx = 0;
        for (const auto& e : store.entries()) {
            char prefix[32];
            std::snprintf(prefix, sizeof(prefix), "p%04zu_", idx++);
            const std::string file = sec_name + "_" + prefix + sanitize(e.name) + ".f64";
            write_f64_file((fs::path(dir) / file).string(), e.value);
            params.push_back({{"name", e.name}, {"shape", e.shape}, {"file", file}});
        }
        sections[sec_name] = params;
    }
    manifest["sections"] = sections;

    std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::trunc);
    if (!mf) throw IoError("cannot write manifest in " + dir);
    mf << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& dir) {
    const fs::path mpath = fs::path(dir) / "manifest.json";
    std::ifstream mf(mpath);
    if (!mf) throw IoError("checkpoint manifest not found: " + mpath.string());
    json manifest;
    try {
        mf >> manifest;
    } catch (const json::exception& e) {
        throw IoError("bad checkpoint manifest " + mpath.string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "elastic-ckpt-v1") {
        throw IoError("unsupported checkpoint format in " + mpath.string());
    }
    Checkpoint ckpt;
    ckpt.optimizer = manifest.value("optimizer", "adamw");
    ckpt.extra_json = manifest.contains("extra") ? manifest["extra"].dump() : "{}";
    for (const auto& [sec_name, params] : manifest.at("sections").items()) {
        ParamStore store;
        for (const auto& p : params) {
            Shape shape = p.at("shape").get<Shape>();
            auto data = read_f64_file((fs::path(dir) / p.at("file").get<std::string>()).string(),
                                      numel(shape));
            store.add(p.at("name").get<std::string>(), std::move(shape), std::move(data));
        }
        ckpt.sections.emplace(sec_name, std::move(store));
    }
    return ckpt;
}

std::uint64_t params_fingerprint(const ParamStore& store) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix_byte = [&](unsigned char b) {
        h ^= b;
        h *= 1099511628211ULL;
    };
    for (const auto& e : store.entries()) {
        for (unsigned char c : e.name) mix_byte(c);
        for (double d : e.value) {
            std::uint64_t bits;
            std::memcpy(&bits, &d, 8);
            for (int b = 0; b < 8; ++b) mix_byte(static_cast<unsigned char>((bits >> (8 * b)) & 0xff));
        }
    }
    return h;
}

}  // namespace elastic
