#pragma once

#include <stdexcept>
#include <string>

namespace bap {

// Root of every error the library raises. Each subclass names the failure
// class so callers (and tests) can react to a category rather than a message.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Extents or ranks that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Zero vectors, zero sums, and anything else that would need a silent clamp.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// A caller broke an API precondition (non-scalar loss, step past the end, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf surfaced inside a numeric routine.
class NumericError : public Error {
 public:
  using Error::Error;
};

class PlacementError : public Error {
 public:
  using Error::Error;
};

class DegenerateMaskError : public Error {
 public:
  using Error::Error;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

// Missing anchors, unmapped classes, malformed manifests.
class ManifestError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace bap
