#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace reid {

enum class ErrorKind {
  ZeroNorm,
  DimMismatch,
  EmptyInput,
  InvalidLabel,
  MissingAttributes,
  SlicePlanOverflow,
  NoValidTriplet,
  BadPKShape,
  TooFewIdentities,
  OutOfRange,
  ShapeMismatch,
  ConfigConflict,
  NonFiniteLoss,
  EmptyGalleryAfterFilter,
  NoRelevant,
  BadFilename,
  ParseError,
  InvariantViolation,
  IoError,
};

std::string_view to_string(ErrorKind kind);

// Every failure in the library is reported through this type; kind() lets
// callers (and the CLI exit-code mapping) branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace reid
