// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0

#include "r4d/error.hpp"

namespace r4d {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension error";
    case ErrorKind::precondition: return "precondition error";
    case ErrorKind::configuration: return "configuration error";
    case ErrorKind::input: return "input error";
    case ErrorKind::parse: return "parse error";
    case ErrorKind::version: return "version error";
    case ErrorKind::io: return "io error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::state: return "state error";
    case ErrorKind::assignment: return "assignment error";
  }
  return "error";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace r4d
