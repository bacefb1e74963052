#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace relex {

enum class ErrorCode {
  // corpus
  MalformedLine,
  DanglingReference,
  OffsetOutOfRange,
  UnassignedEntity,
  // schema
  UnknownSchema,
  MalformedSchema,
  DuplicateRule,
  // candidates
  AmbiguousRole,
  ConflictingGold,
  // encoding
  MarkersDoNotFit,
  // model
  PositionOutOfRange,
  DimensionMismatch,
  EmptyStratum,
  AmbiguousSchemaForBinary,
  InsufficientData,
  InvalidShape,
  InvalidConfig,
  UnsupportedEncoder,
  // inference
  MissingGroup,
  AmbiguousCategory,
  IOFailure,
  // evaluation
  EntitySpaceMismatch,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedLine: return "MalformedLine";
    case ErrorCode::DanglingReference: return "DanglingReference";
    case ErrorCode::OffsetOutOfRange: return "OffsetOutOfRange";
    case ErrorCode::UnassignedEntity: return "UnassignedEntity";
    case ErrorCode::UnknownSchema: return "UnknownSchema";
    case ErrorCode::MalformedSchema: return "MalformedSchema";
    case ErrorCode::DuplicateRule: return "DuplicateRule";
    case ErrorCode::AmbiguousRole: return "AmbiguousRole";
    case ErrorCode::ConflictingGold: return "ConflictingGold";
    case ErrorCode::MarkersDoNotFit: return "MarkersDoNotFit";
    case ErrorCode::PositionOutOfRange: return "PositionOutOfRange";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyStratum: return "EmptyStratum";
    case ErrorCode::AmbiguousSchemaForBinary: return "AmbiguousSchemaForBinary";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::InvalidShape: return "InvalidShape";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::UnsupportedEncoder: return "UnsupportedEncoder";
    case ErrorCode::MissingGroup: return "MissingGroup";
    case ErrorCode::AmbiguousCategory: return "AmbiguousCategory";
    case ErrorCode::IOFailure: return "IOFailure";
    case ErrorCode::EntitySpaceMismatch: return "EntitySpaceMismatch";
  }
  return "Unknown";
}

// Single exception type for the library; callers dispatch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace relex
