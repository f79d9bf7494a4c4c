#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace shimer {

enum class ErrorCode {
  PayloadTooLarge,
  Incomplete,
  PaddingMismatch,
  ContractViolation,
  EntropyUnavailable,
  CounterExhausted,
  TooManyTokens,
  BadSpec,
  PointerEscape,
  UnknownToken,
  DomainError,
  Transport,
  ServerError,
  NonDeterministic,
  SettingsMismatch,
  BadContainer,
  RefuseOverwrite,
  Io,
};

std::string_view to_string(ErrorCode code);

/// Every failure surfaced by the library carries one of the codes above so the
/// CLI can map it to a stable exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool condition, const char* what) {
  if (!condition) fail(ErrorCode::ContractViolation, what);
}

}  // namespace shimer
