#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pemed {

enum class ErrorCode {
  ShapeMismatch,
  BadGeometry,
  NonFinite,
  NonScalarLoss,
  OutOfBoundsClick,
  DecodeError,
  UnsupportedFormat,
  StateCorrupt,
  NoErrorRegion,
  EmptyGt,
  DatasetEmpty,
  Divergence,
  Io,
  InvalidArgument,
  SessionNotFound,
  ConcurrentModification,
  PayloadTooLarge,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "SHAPE_MISMATCH";
    case ErrorCode::BadGeometry: return "BAD_GEOMETRY";
    case ErrorCode::NonFinite: return "NON_FINITE";
    case ErrorCode::NonScalarLoss: return "NON_SCALAR_LOSS";
    case ErrorCode::OutOfBoundsClick: return "OUT_OF_BOUNDS_CLICK";
    case ErrorCode::DecodeError: return "DECODE_ERROR";
    case ErrorCode::UnsupportedFormat: return "UNSUPPORTED_FORMAT";
    case ErrorCode::StateCorrupt: return "STATE_CORRUPT";
    case ErrorCode::NoErrorRegion: return "NO_ERROR_REGION";
    case ErrorCode::EmptyGt: return "EMPTY_GT";
    case ErrorCode::DatasetEmpty: return "DATASET_EMPTY";
    case ErrorCode::Divergence: return "DIVERGENCE";
    case ErrorCode::Io: return "IO_ERROR";
    case ErrorCode::InvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::SessionNotFound: return "SESSION_NOT_FOUND";
    case ErrorCode::ConcurrentModification: return "CONCURRENT_MODIFICATION";
    case ErrorCode::PayloadTooLarge: return "PAYLOAD_TOO_LARGE";
  }
  return "UNKNOWN";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace pemed
