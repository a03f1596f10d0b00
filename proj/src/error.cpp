#include "chatassist/error.hpp"

namespace chatassist {

std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kEmptyCorpus: return "EmptyCorpus";
    case ErrorCode::kNotEnoughCategories: return "NotEnoughCategories";
    case ErrorCode::kMalformedVector: return "MalformedVector";
    case ErrorCode::kInvalidDims: return "InvalidDims";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kDivergenceDetected: return "DivergenceDetected";
    case ErrorCode::kDimMismatch: return "DimMismatch";
    case ErrorCode::kUnorderedLog: return "UnorderedLog";
    case ErrorCode::kUnknownActionRef: return "UnknownActionRef";
    case ErrorCode::kInsufficientData: return "InsufficientData";
    case ErrorCode::kGateUnsatisfiable: return "GateUnsatisfiable";
    case ErrorCode::kCategoryOutsideSchema: return "CategoryOutsideSchema";
    case ErrorCode::kSchemaMismatch: return "SchemaMismatch";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kUnknownAttribute: return "UnknownAttribute";
    case ErrorCode::kUnresolvableObjective: return "UnresolvableObjective";
    case ErrorCode::kTooManyClients: return "TooManyClients";
    case ErrorCode::kMissingModelBundle: return "MissingModelBundle";
    case ErrorCode::kSessionClosed: return "SessionClosed";
    case ErrorCode::kUnknownClient: return "UnknownClient";
    case ErrorCode::kMessageIndexOutOfRange: return "MessageIndexOutOfRange";
    case ErrorCode::kIncompleteLog: return "IncompleteLog";
    case ErrorCode::kCorruptLog: return "CorruptLog";
    case ErrorCode::kPortInUse: return "PortInUse";
    case ErrorCode::kBadConfig: return "BadConfig";
    case ErrorCode::kBadArgs: return "BadArgs";
    case ErrorCode::kNotFound: return "NotFound";
  }
  return "Unknown";
}

}  // namespace chatassist
