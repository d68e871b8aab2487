#pragma once

#include <stdexcept>
#include <string>

namespace mstta {

// Base for every error thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ZeroVectorError : Error {
  using Error::Error;
};
struct NonFiniteError : Error {
  using Error::Error;
};
struct DimMismatchError : Error {
  using Error::Error;
};
struct OutOfRangeError : Error {
  using Error::Error;
};
struct BadClassIndexError : Error {
  using Error::Error;
};
struct DegenerateShiftError : Error {
  using Error::Error;
};
struct DegenerateClassError : Error {
  using Error::Error;
};
struct EmptyDatasetError : Error {
  using Error::Error;
};
struct ManifestMismatchError : Error {
  using Error::Error;
};
struct UnsupportedVersionError : Error {
  using Error::Error;
};
struct LabelOutOfRangeError : Error {
  using Error::Error;
};
struct InfeasibleSpecError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

}  // namespace mstta
