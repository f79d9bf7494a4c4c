#include "shimer/error.hpp"

namespace shimer {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::PayloadTooLarge: return "PayloadTooLarge";
    case ErrorCode::Incomplete: return "Incomplete";
    case ErrorCode::PaddingMismatch: return "PaddingMismatch";
    case ErrorCode::ContractViolation: return "ContractViolation";
    case ErrorCode::EntropyUnavailable: return "EntropyUnavailable";
    case ErrorCode::CounterExhausted: return "CounterExhausted";
    case ErrorCode::TooManyTokens: return "TooManyTokens";
    case ErrorCode::BadSpec: return "BadSpec";
    case ErrorCode::PointerEscape: return "PointerEscape";
    case ErrorCode::UnknownToken: return "UnknownToken";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::Transport: return "Transport";
    case ErrorCode::ServerError: return "ServerError";
    case ErrorCode::NonDeterministic: return "NonDeterministic";
    case ErrorCode::SettingsMismatch: return "SettingsMismatch";
    case ErrorCode::BadContainer: return "BadContainer";
    case ErrorCode::RefuseOverwrite: return "RefuseOverwrite";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace shimer
