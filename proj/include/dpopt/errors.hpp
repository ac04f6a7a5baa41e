#pragma once

#include <stdexcept>
#include <string>

namespace dpopt {

// Base class for all toolkit errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// A caller-supplied parameter is outside its documented range.
struct ParameterError : Error {
  using Error::Error;
};

// Input data is malformed (non-finite values, mismatched lengths, values
// outside the quantization range).
struct InputError : Error {
  using Error::Error;
};

// An internal invariant was violated; indicates a bug, not bad input.
struct InvariantError : Error {
  using Error::Error;
};

// An optimizer produced a non-finite or absurdly large iterate.
struct DivergenceError : Error {
  DivergenceError(const std::string& what, long step)
      : Error(what + " (step " + std::to_string(step) + ")"), step(step) {}
  long step;
};

// Noise calibration could not reach the target within the search bracket.
struct CalibrationError : Error {
  using Error::Error;
};

// A theorem hypothesis does not hold for the requested configuration.
struct ValidityError : Error {
  using Error::Error;
};

// Experiment configuration is malformed.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace dpopt
