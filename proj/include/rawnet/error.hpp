// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace rawnet {

/// Base of every error raised by the library. `kind()` is a stable,
/// machine-readable class name that the CLI prints on failure.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

/// Tensor extents or channel counts do not line up.
struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error("shape_error", what) {}
};

/// An argument is outside its valid domain.
struct ValueError : Error {
  explicit ValueError(const std::string& what) : Error("value_error", what) {}
};

/// A file or text record violates its format.
struct FormatError : Error {
  explicit FormatError(const std::string& what) : Error("format_error", what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error("io_error", what) {}
};

/// The autograd API was used out of contract (e.g. backward twice).
struct GraphError : Error {
  explicit GraphError(const std::string& what) : Error("graph_error", what) {}
};

}  // namespace rawnet
