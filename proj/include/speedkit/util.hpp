// Copyright (c) 2026 speedkit contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace speedkit {

/// Monotonic clock, nanoseconds. All trace timestamps come from this source.
int64_t now_ns();

inline double ns_to_ms(int64_t ns) { return static_cast<double>(ns) / 1e6; }

std::string sha256_hex(std::string_view data);
uint64_t fnv1a64(std::string_view data);

std::string read_text_file(const std::string& path);

/// Write-temp-then-rename so readers never observe a partial file.
void write_text_file_atomic(const std::string& path, std::string_view data);

/// Splits on '\n'; a trailing newline does not produce an empty last line.
std::vector<std::string> split_lines(std::string_view text);

std::string base64_decode(std::string_view in);

/// Raises RLIMIT_NOFILE soft limit to at least `want` (capped at the hard
/// limit). Needed for high-concurrency benchmark runs.
void raise_nofile_limit(uint64_t want);

}  // namespace speedkit
