#pragma once

#include <stdexcept>
#include <string>

namespace fwadv {

/// Raised when an input violates a documented precondition (bad shape, bad
/// parameter, malformed file). The CLI maps it to exit code 2.
class ValidationError : public std::invalid_argument {
public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// Raised when a well-formed computation fails at run time (divergence,
/// non-finite values). The CLI maps it to exit code 3.
class RuntimeFailure : public std::runtime_error {
public:
  explicit RuntimeFailure(const std::string& what) : std::runtime_error(what) {}
};

} // namespace fwadv
