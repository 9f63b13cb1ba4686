#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stagehand {

enum class ErrorCode {
  ShapeMismatch,
  DivisionByZero,
  IndexOutOfBounds,
  BadEllipsis,
  NotScalar,
  BooleanOperand,
  SyntaxError,
  UnknownToken,
  UnboundVariable,
  TypeArity,
  NegativeSigma,
  MissingBinding,
  ParseError,
  MissingFile,
  UnknownField,
  TraceFormatError,
  ActionDimMismatch,
  LengthMismatch,
  NonFiniteLoss,
  CheckpointShapeMismatch,
  VersionMismatch,
  Io,
  ZeroVariance,
  EmptyText,
  EmptyStore,
  DuplicateId,
  MissingPlaceholder,
  NoBlocks,
  MalformedBlock,
  PathEscape,
  NoJson,
  BadKey,
  UnknownFile,
  RetriesExhausted,
  FixtureMissing,
  Transport,
  InvalidArtifact,
  ValidationFailed,
  NotPromoted,
  InvalidArgument,
  UnknownEvaluation,
  UnknownVariable,
  UnknownCombination,
  EmptyEvaluations,
  NonFinite,
  MissingKey,
  TypeMismatch,
  UnknownKey,
  UnknownOperation,
  UnknownDistribution,
  RangeInverted,
};

/// Upper-snake name used in reports and CLI output, e.g. "SHAPE_MISMATCH".
std::string_view code_name(ErrorCode code) noexcept;

/// The single exception type thrown by the library. what() is "CODE: message".
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

}  // namespace stagehand
