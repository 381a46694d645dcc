#pragma once

#include <stdexcept>
#include <string>

namespace rclstr {

enum class ErrorKind {
  ShapeMismatch,
  ShapeError,
  DomainError,
  DegenerateInput,
  NotScalar,
  ConfigError,
  EmptyWord,
  DoesNotFit,
  GroupError,
  MaskAllFalse,
  BatchTooLarge,
  IoError,
  VersionMismatch,
  DigestMismatch,
  CheckpointError,
  DataExhausted,
  NonFiniteLoss,
};

inline const char* error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::ShapeError: return "ShapeError";
    case ErrorKind::DomainError: return "DomainError";
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::NotScalar: return "NotScalar";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::EmptyWord: return "EmptyWord";
    case ErrorKind::DoesNotFit: return "DoesNotFit";
    case ErrorKind::GroupError: return "GroupError";
    case ErrorKind::MaskAllFalse: return "MaskAllFalse";
    case ErrorKind::BatchTooLarge: return "BatchTooLarge";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::DigestMismatch: return "DigestMismatch";
    case ErrorKind::CheckpointError: return "CheckpointError";
    case ErrorKind::DataExhausted: return "DataExhausted";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
  }
  return "UnknownError";
}

/// Library-wide exception carrying a machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void check(bool cond, ErrorKind kind, const std::string& message) {
  if (!cond) raise(kind, message);
}

}  // namespace rclstr
