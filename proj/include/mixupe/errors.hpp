#pragma once

#include <stdexcept>
#include <string>

namespace mixupe {

/// Shape/dimension mismatch between tensors; the message names both shapes.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

/// A forward computation produced NaN or Inf; the message names the op.
class NonFiniteError : public std::runtime_error {
 public:
  explicit NonFiniteError(const std::string& what) : std::runtime_error(what) {}
};

/// Misuse of the reverse-mode tape (non-scalar root, double backward, ...).
class AutogradError : public std::runtime_error {
 public:
  explicit AutogradError(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid or unreadable configuration / dataset spec. Maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Unreadable or malformed data file.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mixupe
