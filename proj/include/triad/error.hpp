#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace triad {

enum class ErrorCode {
  invalid_pair,
  invalid_triplet,
  too_few_items,
  parse,
  input,
  plan,
  tie,
  divergence,
  coverage,
  iteration_limit,
  size,
  validation,
  emission,
  io,
  // study service
  not_found,
  completed,
  sequence,
  conflict,
  state,
  protocol,
  planning,
  unauthorized,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the toolkit carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace triad
