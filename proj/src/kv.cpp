// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0

#include "r4d/kv.hpp"

#include <charconv>
#include <cmath>

#include "r4d/error.hpp"

namespace r4d {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && !s.empty();
}

}  // namespace

KeyValues KeyValues::parse(std::string_view text, const std::string& source) {
  KeyValues kv;
  kv.source_ = source;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      fail(ErrorKind::parse, source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    std::string key(trim(line.substr(0, eq)));
    std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) fail(ErrorKind::parse, source + ":" + std::to_string(line_no) + ": empty key");
    if (kv.entries_.count(key))
      fail(ErrorKind::parse, source + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    kv.lines_[key] = line_no;
    kv.entries_.emplace(std::move(key), std::move(value));
  }
  return kv;
}

const std::string* KeyValues::find(const std::string& key) {
  auto it = entries_.find(key);
  if (it == entries_.end()) return nullptr;
  used_.insert(key);
  return &it->second;
}

double KeyValues::take_double(const std::string& key, double fallback) {
  const std::string* v = find(key);
  if (v == nullptr) return fallback;
  double out = 0.0;
  if (!parse_number(*v, out) || !std::isfinite(out))
    fail(ErrorKind::parse, source_ + ":" + std::to_string(lines_[key]) + ": '" + key +
                               "' expects a finite number, got '" + *v + "'");
  return out;
}

std::int64_t KeyValues::take_int(const std::string& key, std::int64_t fallback) {
  const std::string* v = find(key);
  if (v == nullptr) return fallback;
  std::int64_t out = 0;
  if (!parse_number(*v, out))
    fail(ErrorKind::parse, source_ + ":" + std::to_string(lines_[key]) + ": '" + key +
                               "' expects an integer, got '" + *v + "'");
  return out;
}

std::uint64_t KeyValues::take_uint(const std::string& key, std::uint64_t fallback) {
  const std::string* v = find(key);
  if (v == nullptr) return fallback;
  std::uint64_t out = 0;
  if (!parse_number(*v, out))
    fail(ErrorKind::parse, source_ + ":" + std::to_string(lines_[key]) + ": '" + key +
                               "' expects a non-negative integer, got '" + *v + "'");
  return out;
}

bool KeyValues::take_bool(const std::string& key, bool fallback) {
  const std::string* v = find(key);
  if (v == nullptr) return fallback;
  if (*v == "true" || *v == "1" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "off") return false;
  fail(ErrorKind::parse, source_ + ":" + std::to_string(lines_[key]) + ": '" + key +
                             "' expects true/false, got '" + *v + "'");
}

std::string KeyValues::take_string(const std::string& key, const std::string& fallback) {
  const std::string* v = find(key);
  return v == nullptr ? fallback : *v;
}

std::vector<double> KeyValues::take_doubles(const std::string& key, const std::vector<double>& fallback) {
  const std::string* v = find(key);
  if (v == nullptr) return fallback;
  std::vector<double> out;
  std::string_view rest = trim(*v);
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const std::string_view item = rest.substr(0, comma);
    double x = 0.0;
    if (!parse_number(item, x))
      fail(ErrorKind::parse, source_ + ":" + std::to_string(lines_[key]) + ": '" + key +
                                 "' expects a comma-separated number list, got '" + *v + "'");
    out.push_back(x);
    rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
  }
  return out;
}

void KeyValues::finish() const {
  for (const auto& [key, value] : entries_)
    if (!used_.count(key))
      fail(ErrorKind::configuration, source_ + ":" + std::to_string(lines_.at(key)) + ": unknown key '" + key + "'");
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace r4d
