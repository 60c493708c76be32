#pragma once

#include <stdexcept>
#include <string>

namespace fasmap {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Out-of-range indices or degenerate geometry (e.g. a zero-length link).
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Tensor/matrix shapes that do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Factorization or decomposition failures.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Codebook synthesis could not reach the requested correlation.
class SynthesisError : public Error {
 public:
  using Error::Error;
};

/// Malformed files on disk.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace fasmap
