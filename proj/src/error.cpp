#include "codedlf/error.hpp"

namespace codedlf {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingView: return "missing view";
    case ErrorKind::InconsistentDimensions: return "inconsistent dimensions";
    case ErrorKind::MalformedMetadata: return "malformed metadata";
    case ErrorKind::SampleOutOfRange: return "sample out of range";
    case ErrorKind::OutOfBounds: return "out of bounds";
    case ErrorKind::InvalidSpec: return "invalid spec";
    case ErrorKind::DimensionMismatch: return "dimension mismatch";
    case ErrorKind::InvalidPattern: return "invalid pattern";
    case ErrorKind::Schema: return "schema violation";
    case ErrorKind::Io: return "i/o error";
    case ErrorKind::Graph: return "graph error";
    case ErrorKind::MissingGradient: return "missing gradient";
    case ErrorKind::InvalidConfig: return "invalid config";
    case ErrorKind::Checkpoint: return "checkpoint error";
    case ErrorKind::NonMonotone: return "non-monotone samples";
    case ErrorKind::NonFinite: return "non-finite value";
  }
  return "unknown";
}

}  // namespace codedlf
