#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace codedlf {

enum class ErrorKind {
  MissingView,
  InconsistentDimensions,
  MalformedMetadata,
  SampleOutOfRange,
  OutOfBounds,
  InvalidSpec,
  DimensionMismatch,
  InvalidPattern,
  Schema,
  Io,
  Graph,
  MissingGradient,
  InvalidConfig,
  Checkpoint,
  NonMonotone,
  NonFinite,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library; `kind()` distinguishes failure modes
// and the message names the offending file, field or index.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace codedlf
