#include "geomerge/error.hpp"

namespace geomerge {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::UnsupportedDType: return "UnsupportedDType";
    case ErrorCode::UnknownTensor: return "UnknownTensor";
    case ErrorCode::TruncatedData: return "TruncatedData";
    case ErrorCode::DuplicateName: return "DuplicateName";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::ZeroNormTensor: return "ZeroNormTensor";
    case ErrorCode::AntipodalDirections: return "AntipodalDirections";
    case ErrorCode::MissingTensor: return "MissingTensor";
    case ErrorCode::MissingBase: return "MissingBase";
    case ErrorCode::InvalidRecipe: return "InvalidRecipe";
  }
  return "Unknown";
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch:
    case ErrorCode::MissingTensor:
    case ErrorCode::MissingBase:
    case ErrorCode::InvalidRecipe:
    case ErrorCode::DuplicateName:
      return 2;
    case ErrorCode::AntipodalDirections:
    case ErrorCode::ZeroNormTensor:
      return 3;
    case ErrorCode::MalformedHeader:
    case ErrorCode::UnsupportedDType:
    case ErrorCode::UnknownTensor:
    case ErrorCode::TruncatedData:
    case ErrorCode::IoFailure:
      return 4;
  }
  return 1;
}

}  // namespace geomerge
