#pragma once

#include <stdexcept>
#include <string>

namespace fsmt {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes incompatible with an operation. Messages name the op and
// the offending dimensions.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid run configuration, manifest, or command-line arguments.
struct ConfigError : Error {
  using Error::Error;
};

// Unreadable or inconsistent dataset contents.
struct DataError : Error {
  using Error::Error;
};

// Misuse of the autograd engine (non-scalar backward, consumed lineage).
struct AutogradError : Error {
  using Error::Error;
};

}  // namespace fsmt
