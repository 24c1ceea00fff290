#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace movieseq {

enum class ErrorCode {
  kOverLength,
  kEmptyAnswer,
  kInvalidId,
  kMissingEmbedding,
  kTooManyFrames,
  kEmptyMask,
  kUnknownName,
  kMissingPrediction,
  kLengthMismatch,
  kDegenerateCorpus,
  kBadK,
  kNonPositive,
  kParseError,
  kSchemaError,
  kDanglingRef,
  kTaskMismatch,
  kConfigMismatch,
  kIoError,
  kInvalidArgument,
};

inline std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kOverLength: return "OverLength";
    case ErrorCode::kEmptyAnswer: return "EmptyAnswer";
    case ErrorCode::kInvalidId: return "InvalidId";
    case ErrorCode::kMissingEmbedding: return "MissingEmbedding";
    case ErrorCode::kTooManyFrames: return "TooManyFrames";
    case ErrorCode::kEmptyMask: return "EmptyMask";
    case ErrorCode::kUnknownName: return "UnknownName";
    case ErrorCode::kMissingPrediction: return "MissingPrediction";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kDegenerateCorpus: return "DegenerateCorpus";
    case ErrorCode::kBadK: return "BadK";
    case ErrorCode::kNonPositive: return "NonPositive";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kSchemaError: return "SchemaError";
    case ErrorCode::kDanglingRef: return "DanglingRef";
    case ErrorCode::kTaskMismatch: return "TaskMismatch";
    case ErrorCode::kConfigMismatch: return "ConfigMismatch";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI's exit-code mapping) can dispatch on the kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code), detail_(what) {}

  ErrorCode code() const noexcept { return code_; }
  /// The message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

/// True for failures caused by bad inputs (files, manifests, references)
/// rather than by the computation itself.
inline bool is_data_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::kParseError:
    case ErrorCode::kSchemaError:
    case ErrorCode::kDanglingRef:
    case ErrorCode::kMissingEmbedding:
    case ErrorCode::kIoError:
    case ErrorCode::kConfigMismatch:
    case ErrorCode::kTaskMismatch:
    case ErrorCode::kUnknownName:
    case ErrorCode::kMissingPrediction:
      return true;
    default:
      return false;
  }
}

}  // namespace movieseq
