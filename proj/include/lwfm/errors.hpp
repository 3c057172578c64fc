#pragma once

#include <stdexcept>
#include <string>

namespace lwfm {

// Argument errors use std::invalid_argument. The types below cover the
// failures that the command-line tool maps onto distinct exit codes.

/// Unsatisfiable run configuration (too few classes, unknown layer, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem failure; the message carries the offending path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed binary file (bad magic, version, truncation).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Well-formed file whose content breaks a data invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lwfm
