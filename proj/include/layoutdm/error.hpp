#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace layoutdm {

enum class ErrorCode {
  kInvalidArgument,
  kOutOfRange,
  kTooManyElements,
  kBadCategory,
  kUnfittedVocab,
  kPartialElement,
  kModalityMismatch,
  kEmptyLayout,
  kEmptyData,
  kNotGeometric,
  kInfeasibleSchedule,
  kZeroEvidence,
  kNonfiniteLoss,
  kShapeMismatch,
  kInvalidCondition,
  kAllMassesZero,
  kNoGeometricMass,
  kCategoryMismatch,
  kTooFewPoints,
  kParseError,
  kUnknownCategory,
  kVersionMismatch,
  kCorruptFile,
  kIoError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::kOutOfRange: return "OUT_OF_RANGE";
    case ErrorCode::kTooManyElements: return "TOO_MANY_ELEMENTS";
    case ErrorCode::kBadCategory: return "BAD_CATEGORY";
    case ErrorCode::kUnfittedVocab: return "UNFITTED_VOCAB";
    case ErrorCode::kPartialElement: return "PARTIAL_ELEMENT";
    case ErrorCode::kModalityMismatch: return "MODALITY_MISMATCH";
    case ErrorCode::kEmptyLayout: return "EMPTY_LAYOUT";
    case ErrorCode::kEmptyData: return "EMPTY_DATA";
    case ErrorCode::kNotGeometric: return "NOT_GEOMETRIC";
    case ErrorCode::kInfeasibleSchedule: return "INFEASIBLE_SCHEDULE";
    case ErrorCode::kZeroEvidence: return "ZERO_EVIDENCE";
    case ErrorCode::kNonfiniteLoss: return "NONFINITE_LOSS";
    case ErrorCode::kShapeMismatch: return "SHAPE_MISMATCH";
    case ErrorCode::kInvalidCondition: return "INVALID_CONDITION";
    case ErrorCode::kAllMassesZero: return "ALL_MASSES_ZERO";
    case ErrorCode::kNoGeometricMass: return "NO_GEOMETRIC_MASS";
    case ErrorCode::kCategoryMismatch: return "CATEGORY_MISMATCH";
    case ErrorCode::kTooFewPoints: return "TOO_FEW_POINTS";
    case ErrorCode::kParseError: return "PARSE_ERROR";
    case ErrorCode::kUnknownCategory: return "UNKNOWN_CATEGORY";
    case ErrorCode::kVersionMismatch: return "VERSION_MISMATCH";
    case ErrorCode::kCorruptFile: return "CORRUPT_FILE";
    case ErrorCode::kIoError: return "IO_ERROR";
  }
  return "UNKNOWN";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Process exit codes used by the command-line tool.
enum class ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

inline ExitCode exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kInvalidCondition:
      return ExitCode::kUsage;
    case ErrorCode::kInfeasibleSchedule:
    case ErrorCode::kZeroEvidence:
    case ErrorCode::kNonfiniteLoss:
    case ErrorCode::kAllMassesZero:
    case ErrorCode::kNoGeometricMass:
    case ErrorCode::kTooFewPoints:
      return ExitCode::kNumeric;
    default:
      return ExitCode::kData;
  }
}

#define LAYOUTDM_REQUIRE(cond, code, msg)          \
  do {                                             \
    if (!(cond)) throw ::layoutdm::Error((code), (msg)); \
  } while (0)

}  // namespace layoutdm
