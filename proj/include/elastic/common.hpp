// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace elastic {

using Shape = std::vector<std::size_t>;

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValueError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MaskError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Training abort carrying a diagnostic record (serialized JSON string).
struct TrainAbort : std::runtime_error {
    explicit TrainAbort(const std::string& msg, std::string diagnostic_json)
        : std::runtime_error(msg), diagnostic(std::move(diagnostic_json)) {}
    std::string diagnostic;
};

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s);

// Per-op NaN/Inf guards. Off by default; enabled by ELASTIC_ATTN_DEBUG=1
// or programmatically (tests).
bool debug_checks();
void set_debug_checks(bool on);

void check_finite(const std::vector<double>& v, const char* where);

}  // namespace elastic
