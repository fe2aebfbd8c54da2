#pragma once

#include <stdexcept>
#include <string>

namespace geomerge {

enum class ErrorCode {
  MalformedHeader,
  UnsupportedDType,
  UnknownTensor,
  TruncatedData,
  DuplicateName,
  IoFailure,
  ShapeMismatch,
  ZeroNormTensor,
  AntipodalDirections,
  MissingTensor,
  MissingBase,
  InvalidRecipe,
};

const char* to_string(ErrorCode code);

// Every failure raised by the library carries a code so the CLI can map it
// onto an exit status without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), detail_(what) {}

  ErrorCode code() const noexcept { return code_; }
  // Message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

// 2 = validation, 3 = numeric, 4 = I/O.
int exit_code_for(ErrorCode code);

}  // namespace geomerge
