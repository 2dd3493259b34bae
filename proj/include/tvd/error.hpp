#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tvd {

enum class ErrorCode {
  InvalidMatrix,
  NotSymmetric,
  ZeroTaskVector,
  DimensionMismatch,
  NeedTwoProjectors,
  InvalidOrder,
  InvalidThreshold,
  EmptyInput,
  LayerMismatch,
  NeedTwoVectors,
  ZeroSubspace,
  InvalidSpec,
  DivergedTraining,
  ArchitectureMismatch,
  BadMagic,
  ChecksumMismatch,
  Truncated,
  DuplicateName,
  InvalidArgument,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidMatrix: return "InvalidMatrix";
    case ErrorCode::NotSymmetric: return "NotSymmetric";
    case ErrorCode::ZeroTaskVector: return "ZeroTaskVector";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NeedTwoProjectors: return "NeedTwoProjectors";
    case ErrorCode::InvalidOrder: return "InvalidOrder";
    case ErrorCode::InvalidThreshold: return "InvalidThreshold";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::LayerMismatch: return "LayerMismatch";
    case ErrorCode::NeedTwoVectors: return "NeedTwoVectors";
    case ErrorCode::ZeroSubspace: return "ZeroSubspace";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::DivergedTraining: return "DivergedTraining";
    case ErrorCode::ArchitectureMismatch: return "ArchitectureMismatch";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::Truncated: return "Truncated";
    case ErrorCode::DuplicateName: return "DuplicateName";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Failures that come from the numbers themselves rather than from bad input.
/// The CLI maps these to exit code 3.
constexpr bool is_numerical(ErrorCode code) {
  return code == ErrorCode::InvalidMatrix || code == ErrorCode::NotSymmetric ||
         code == ErrorCode::DivergedTraining;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace tvd
