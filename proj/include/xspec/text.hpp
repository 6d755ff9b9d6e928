// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Small text helpers shared by the file formats.

#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace xspec {

// Shortest round-tripping decimal form is not required; 17 significant
// digits always reproduces the double bit-exactly.
std::string format_double(double v);

std::string_view trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

// Strict conversions: the whole string must parse. Return false on failure.
bool parse_int(std::string_view s, long long& out);
bool parse_double(std::string_view s, double& out);
bool parse_bool(std::string_view s, bool& out);

}  // namespace xspec
