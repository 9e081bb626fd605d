// Copyright (c) 2026 the elastic-attn authors
// SPDX-License-Identifier: Apache-2.0

#include "elastic/common.hpp"

#include <cmath>
#include <cstdlib>

namespace elastic {

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    out += "]";
    return out;
}

namespace {
bool g_debug_initialized = false;
bool g_debug = false;
}  // namespace

bool debug_checks() {
    if (!g_debug_initialized) {
        const char* env = std::getenv("ELASTIC_ATTN_DEBUG");
        g_debug = env != nullptr && env[0] == '1';
        g_debug_initialized = true;
    }
    return g_debug;
}

void set_debug_checks(bool on) {
    g_debug_initialized = true;
    g_debug = on;
}

void check_finite(const std::vector<double>& v, const char* where) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string("non-finite value in ") + where);
        }
    }
}

}  // namespace elastic
