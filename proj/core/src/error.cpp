#include "stagehand/error.hpp"

namespace stagehand {

std::string_view code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "SHAPE_MISMATCH";
    case ErrorCode::DivisionByZero: return "DIVISION_BY_ZERO";
    case ErrorCode::IndexOutOfBounds: return "INDEX_OUT_OF_BOUNDS";
    case ErrorCode::BadEllipsis: return "BAD_ELLIPSIS";
    case ErrorCode::NotScalar: return "NOT_SCALAR";
    case ErrorCode::BooleanOperand: return "BOOLEAN_OPERAND";
    case ErrorCode::SyntaxError: return "SYNTAX_ERROR";
    case ErrorCode::UnknownToken: return "UNKNOWN_TOKEN";
    case ErrorCode::UnboundVariable: return "UNBOUND_VARIABLE";
    case ErrorCode::TypeArity: return "TYPE_ARITY";
    case ErrorCode::NegativeSigma: return "NEGATIVE_SIGMA";
    case ErrorCode::MissingBinding: return "MISSING_BINDING";
    case ErrorCode::ParseError: return "PARSE_ERROR";
    case ErrorCode::MissingFile: return "MISSING_FILE";
    case ErrorCode::UnknownField: return "UNKNOWN_FIELD";
    case ErrorCode::TraceFormatError: return "TRACE_FORMAT_ERROR";
    case ErrorCode::ActionDimMismatch: return "ACTION_DIM_MISMATCH";
    case ErrorCode::LengthMismatch: return "LENGTH_MISMATCH";
    case ErrorCode::NonFiniteLoss: return "NON_FINITE_LOSS";
    case ErrorCode::CheckpointShapeMismatch: return "CHECKPOINT_SHAPE_MISMATCH";
    case ErrorCode::VersionMismatch: return "VERSION_MISMATCH";
    case ErrorCode::Io: return "IO";
    case ErrorCode::ZeroVariance: return "ZERO_VARIANCE";
    case ErrorCode::EmptyText: return "EMPTY_TEXT";
    case ErrorCode::EmptyStore: return "EMPTY_STORE";
    case ErrorCode::DuplicateId: return "DUPLICATE_ID";
    case ErrorCode::MissingPlaceholder: return "MISSING_PLACEHOLDER";
    case ErrorCode::NoBlocks: return "NO_BLOCKS";
    case ErrorCode::MalformedBlock: return "MALFORMED_BLOCK";
    case ErrorCode::PathEscape: return "PATH_ESCAPE";
    case ErrorCode::NoJson: return "NO_JSON";
    case ErrorCode::BadKey: return "BAD_KEY";
    case ErrorCode::UnknownFile: return "UNKNOWN_FILE";
    case ErrorCode::RetriesExhausted: return "RETRIES_EXHAUSTED";
    case ErrorCode::FixtureMissing: return "FIXTURE_MISSING";
    case ErrorCode::Transport: return "TRANSPORT";
    case ErrorCode::InvalidArtifact: return "INVALID_ARTIFACT";
    case ErrorCode::ValidationFailed: return "VALIDATION_FAILED";
    case ErrorCode::NotPromoted: return "NOT_PROMOTED";
    case ErrorCode::InvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::UnknownEvaluation: return "UNKNOWN_EVALUATION";
    case ErrorCode::UnknownVariable: return "UNKNOWN_VARIABLE";
    case ErrorCode::UnknownCombination: return "UNKNOWN_COMBINATION";
    case ErrorCode::EmptyEvaluations: return "EMPTY_EVALUATIONS";
    case ErrorCode::NonFinite: return "NON_FINITE";
    case ErrorCode::MissingKey: return "MISSING_KEY";
    case ErrorCode::TypeMismatch: return "TYPE_MISMATCH";
    case ErrorCode::UnknownKey: return "UNKNOWN_KEY";
    case ErrorCode::UnknownOperation: return "UNKNOWN_OPERATION";
    case ErrorCode::UnknownDistribution: return "UNKNOWN_DISTRIBUTION";
    case ErrorCode::RangeInverted: return "RANGE_INVERTED";
  }
  return "UNKNOWN";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(code_name(code)) + ": " + message), code_(code), message_(message) {}

}  // namespace stagehand
