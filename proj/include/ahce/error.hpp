#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace ahce {

/// Failure categories. Each maps onto one CLI exit code.
enum class Errc {
  usage,               // bad arguments or configuration
  parse,               // malformed input file
  unknown_variable,
  cycle,
  dangling_edge,
  missing_target,
  target_has_outgoing_edge,
  duplicate,
  validation,          // structurally valid input violating a data invariant
  dimension_mismatch,
  fingerprint_mismatch,
  io,
  domain,              // non-finite value produced by an expression
  numerical,           // non-finite loss, gradient or statistic
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, std::string message)
      : std::runtime_error(std::move(message)), code_(code) {}

  Errc code() const noexcept { return code_; }

  /// 1 usage error, 2 data/validation error, 3 numerical failure.
  int exit_code() const noexcept {
    switch (code_) {
      case Errc::usage:
        return 1;
      case Errc::domain:
      case Errc::numerical:
        return 3;
      default:
        return 2;
    }
  }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, std::string message) {
  throw Error(code, std::move(message));
}

}  // namespace ahce
