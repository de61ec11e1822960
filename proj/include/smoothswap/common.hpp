#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace smoothswap {

// Scalar type of all tensor data. 64-bit by default so finite-difference
// checks have headroom; -DSMOOTHSWAP_REAL32=ON switches to 32-bit for speed.
#ifdef SMOOTHSWAP_REAL32
using real = float;
inline constexpr const char* kDtypeTag = "f32";
#else
using real = double;
inline constexpr const char* kDtypeTag = "f64";
#endif

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/layer shape mismatches. Messages carry both shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid or inconsistent configuration values.
struct ConfigError : Error {
  using Error::Error;
};

// Violated operation precondition (batch composition, non-scalar loss, ...).
struct ContractError : Error {
  using Error::Error;
};

// Dataset-level problems (too few identities, unknown label, ...).
struct DataError : Error {
  using Error::Error;
};

// Non-finite loss or gradient during training.
struct DivergenceError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// A required input artifact (checkpoint, manifest) does not exist.
struct MissingArtifactError : IoError {
  using IoError::IoError;
};

}  // namespace smoothswap
