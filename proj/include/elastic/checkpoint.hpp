// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>

#include "elastic/params.hpp"

namespace elastic {

// Checkpoint directory layout: manifest.json naming one flat little-endian
// f64 array file per parameter, grouped into named sections ("backbone",
// "router"). `extra` carries run metadata (dims, config echo, lambdas).
struct Checkpoint {
    std::map<std::string, ParamStore> sections;
    std::string optimizer = "adamw";
    std::string extra_json = "{}";
};

void save_checkpoint(const std::string& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& dir);

// Raw little-endian f64 array IO.
void write_f64_file(const std::string& path, const std::vector<double>& data);
std::vector<double> read_f64_file(const std::string& path, std::size_t expected_count);

// FNV-1a over the little-endian byte image; used for frozen-parameter checks.
std::uint64_t params_fingerprint(const ParamStore& store);

}  // namespace elastic
