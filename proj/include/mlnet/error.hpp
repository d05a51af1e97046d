#pragma once

#include <stdexcept>
#include <string>

namespace mlnet {

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Mismatched or invalid tensor/map shapes. Messages name both shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid argument values (probabilities out of range, bad config keys, ...).
struct ValueError : Error {
  using Error::Error;
};

// Unreadable files, malformed formats, missing dataset entries.
struct DataError : Error {
  using Error::Error;
};

// Degenerate numeric situations: zero-variance maps, non-finite gradients,
// all-non-positive predictions.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace mlnet
