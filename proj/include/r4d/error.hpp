// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0
//
// Error taxonomy shared by every module. The C API maps these onto status codes.

#pragma once

#include <stdexcept>
#include <string>

namespace r4d {

enum class ErrorKind {
  dimension,
  precondition,
  configuration,
  input,
  parse,
  version,
  io,
  numeric,
  state,
  assignment,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace r4d
