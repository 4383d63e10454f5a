// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0
//
// Flat "key = value" text used by scene specs and run configs. '#' starts a
// comment; blank lines are ignored; duplicate keys are rejected.

#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace r4d {

class KeyValues {
 public:
  static KeyValues parse(std::string_view text, const std::string& source);

  bool has(std::string_view key) const { return entries_.count(std::string(key)) != 0; }

  // Each getter marks the key consumed; finish() rejects unconsumed keys.
  double take_double(const std::string& key, double fallback);
  std::int64_t take_int(const std::string& key, std::int64_t fallback);
  std::uint64_t take_uint(const std::string& key, std::uint64_t fallback);
  bool take_bool(const std::string& key, bool fallback);
  std::string take_string(const std::string& key, const std::string& fallback);
  std::vector<double> take_doubles(const std::string& key, const std::vector<double>& fallback);
  void finish() const;

 private:
  const std::string* find(const std::string& key);

  std::string source_;
  std::map<std::string, std::string> entries_;
  std::map<std::string, std::size_t> lines_;
  std::set<std::string> used_;
};

// Canonical rendering of a double that round-trips exactly.
std::string format_double(double v);

}  // namespace r4d
