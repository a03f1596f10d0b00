#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace chatassist {

enum class ErrorCode {
  kEmptyCorpus,
  kNotEnoughCategories,
  kMalformedVector,
  kInvalidDims,
  kEmptyDataset,
  kDivergenceDetected,
  kDimMismatch,
  kUnorderedLog,
  kUnknownActionRef,
  kInsufficientData,
  kGateUnsatisfiable,
  kCategoryOutsideSchema,
  kSchemaMismatch,
  kParseError,
  kUnknownAttribute,
  kUnresolvableObjective,
  kTooManyClients,
  kMissingModelBundle,
  kSessionClosed,
  kUnknownClient,
  kMessageIndexOutOfRange,
  kIncompleteLog,
  kCorruptLog,
  kPortInUse,
  kBadConfig,
  kBadArgs,
  kNotFound,
};

// Stable machine-readable name, e.g. "GateUnsatisfiable".
std::string_view error_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace chatassist
