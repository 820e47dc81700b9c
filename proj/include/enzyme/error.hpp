#pragma once

#include <stdexcept>
#include <string>

namespace enzyme {

enum class ErrorCode {
  DuplicateTable,
  UnknownPartitionColumn,
  UnknownTable,
  SchemaMismatch,
  PredicateTypeError,
  VersionOutOfRange,
  UnresolvedColumn,
  TypeMismatch,
  RuntimeTypeError,
  IntegerOverflow,
  NotIncrementalizable,
  MissingUdfSignature,
  MissingBackingState,
  StaleProvenance,
  NegativeGroupCount,
  RowOutsidePartition,
  CycleDetected,
  ParseError,
  IoError,
  InjectedFault,
  Internal,
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::DuplicateTable: return "DuplicateTable";
    case ErrorCode::UnknownPartitionColumn: return "UnknownPartitionColumn";
    case ErrorCode::UnknownTable: return "UnknownTable";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::PredicateTypeError: return "PredicateTypeError";
    case ErrorCode::VersionOutOfRange: return "VersionOutOfRange";
    case ErrorCode::UnresolvedColumn: return "UnresolvedColumn";
    case ErrorCode::TypeMismatch: return "TypeMismatch";
    case ErrorCode::RuntimeTypeError: return "RuntimeTypeError";
    case ErrorCode::IntegerOverflow: return "IntegerOverflow";
    case ErrorCode::NotIncrementalizable: return "NotIncrementalizable";
    case ErrorCode::MissingUdfSignature: return "MissingUdfSignature";
    case ErrorCode::MissingBackingState: return "MissingBackingState";
    case ErrorCode::StaleProvenance: return "StaleProvenance";
    case ErrorCode::NegativeGroupCount: return "NegativeGroupCount";
    case ErrorCode::RowOutsidePartition: return "RowOutsidePartition";
    case ErrorCode::CycleDetected: return "CycleDetected";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InjectedFault: return "InjectedFault";
    case ErrorCode::Internal: return "Internal";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const { return code_; }

private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace enzyme
