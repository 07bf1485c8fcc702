#pragma once

#include <stdexcept>
#include <string>

namespace nlilex {

// Base of every error the toolkit raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input: malformed records, violated invariants, infeasible parameters.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A remote peer answered, but the answer breaks the wire contract.
// Never retried.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Connection failure, timeout, or a retriable HTTP status.
class TransportError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// CLI exit codes.
enum class ExitCode : int {
  success = 0,
  validation = 1,
  partial_failure = 2,
  io = 3,
};

}  // namespace nlilex
