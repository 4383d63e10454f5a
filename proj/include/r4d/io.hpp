// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace r4d::io {

// Whole-file read; throws an io error when the file cannot be opened.
std::string read_file(const std::string& path);

// Writes to "<path>.tmp.<pid>" and renames over the destination.
void write_file_atomic(const std::string& path, std::string_view bytes);

bool file_exists(const std::string& path);

// 64-bit FNV-1a, used for dataset fingerprints and golden checksums.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 1469598103934665603ULL);

std::string hex64(std::uint64_t value);

}  // namespace r4d::io
