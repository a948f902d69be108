#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fairsim {

enum class ErrorCode {
  // Data validation.
  MagicMismatch,
  UnsupportedVersion,
  TruncatedHeader,
  DimZero,
  RowCountMismatch,
  NonFiniteVector,
  ZeroNormVector,
  DuplicateId,
  DuplicateRow,
  RowOutOfRange,
  BadLabelValue,
  MalformedMeta,
  EmptyStore,
  UnknownAttribute,
  NoLabeledRows,
  EmptyGroup,
  EmptyPairs,
  UnlabeledRow,
  MissingGroundTruth,
  MissingPrototype,
  MismatchedQuerySets,
  UnknownToken,
  MalformedFile,
  // Shape / numeric preconditions.
  ZeroVector,
  DimMismatch,
  DimTooSmall,
  AllDimsDropped,
  InvalidArgument,
  EncoderNotDifferentiable,
  NonFiniteLoss,
  Io,
};

enum class ErrorCategory { Usage, Data, Numeric, Io };

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MagicMismatch: return "MagicMismatch";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::TruncatedHeader: return "TruncatedHeader";
    case ErrorCode::DimZero: return "DimZero";
    case ErrorCode::RowCountMismatch: return "RowCountMismatch";
    case ErrorCode::NonFiniteVector: return "NonFiniteVector";
    case ErrorCode::ZeroNormVector: return "ZeroNormVector";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::DuplicateRow: return "DuplicateRow";
    case ErrorCode::RowOutOfRange: return "RowOutOfRange";
    case ErrorCode::BadLabelValue: return "BadLabelValue";
    case ErrorCode::MalformedMeta: return "MalformedMeta";
    case ErrorCode::EmptyStore: return "EmptyStore";
    case ErrorCode::UnknownAttribute: return "UnknownAttribute";
    case ErrorCode::NoLabeledRows: return "NoLabeledRows";
    case ErrorCode::EmptyGroup: return "EmptyGroup";
    case ErrorCode::EmptyPairs: return "EmptyPairs";
    case ErrorCode::UnlabeledRow: return "UnlabeledRow";
    case ErrorCode::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorCode::MissingPrototype: return "MissingPrototype";
    case ErrorCode::MismatchedQuerySets: return "MismatchedQuerySets";
    case ErrorCode::UnknownToken: return "UnknownToken";
    case ErrorCode::MalformedFile: return "MalformedFile";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::DimTooSmall: return "DimTooSmall";
    case ErrorCode::AllDimsDropped: return "AllDimsDropped";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::EncoderNotDifferentiable: return "EncoderNotDifferentiable";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

constexpr ErrorCategory category(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::ZeroVector:
      return ErrorCategory::Numeric;
    case ErrorCode::InvalidArgument:
      return ErrorCategory::Usage;
    case ErrorCode::Io:
      return ErrorCategory::Io;
    default:
      return ErrorCategory::Data;
  }
}

/// Every failure raised by the library. `code()` is stable and is what
/// tests and the CLI dispatch on; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised when training diverges. Carries the last state whose loss was
/// finite so callers can still inspect or persist it.
template <class State>
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& detail, State last_finite)
      : Error(ErrorCode::NonFiniteLoss, detail),
        last_finite_(std::move(last_finite)) {}

  const State& last_finite() const noexcept { return last_finite_; }

 private:
  State last_finite_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail) {
  throw Error(code, detail);
}

}  // namespace fairsim
