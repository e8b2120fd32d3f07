#pragma once

#include <stdexcept>
#include <string>

namespace frfkit {

/// Base class for everything the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: violated preconditions, malformed files, inconsistent dimensions.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A numerical or simulation failure that is not the caller's fault
/// (unstable loop, matrix exponential breakdown).
class RuntimeDefect : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

}  // namespace detail
}  // namespace frfkit
