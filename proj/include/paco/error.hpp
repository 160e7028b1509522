#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace paco {

enum class ErrorCode {
  DegeneratePlane,
  ParallelDirection,
  GenerationFailed,
  DegenerateExtent,
  RankDeficient,
  ShapeMismatch,
  NonFinite,
  NotScalar,
  EmptySet,
  NonUnit,
  TooFewPoints,
  DegenerateFootprint,
  EmptySelection,
  EmptyMesh,
  IoError,
  FormatError,
  UsageError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegeneratePlane: return "DegeneratePlane";
    case ErrorCode::ParallelDirection: return "ParallelDirection";
    case ErrorCode::GenerationFailed: return "GenerationFailed";
    case ErrorCode::DegenerateExtent: return "DegenerateExtent";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::NonUnit: return "NonUnit";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::DegenerateFootprint: return "DegenerateFootprint";
    case ErrorCode::EmptySelection: return "EmptySelection";
    case ErrorCode::EmptyMesh: return "EmptyMesh";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::UsageError: return "UsageError";
  }
  return "Unknown";
}

/// Library-wide exception. The code is stable and machine-checkable; the
/// message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), message_(message) {}

  ErrorCode code() const noexcept { return code_; }
  /// Message without the code prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

}  // namespace paco
