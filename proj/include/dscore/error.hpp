#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dscore {

enum class ErrorCode {
  NonFinite,
  Budget,
  Divergent,
  BadCdf,
  IllConditionedInformation,
  NotParametricNoise,
  DegenerateSample,
  DimensionMismatch,
  OutOfDomain,
  Config,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::Budget: return "Budget";
    case ErrorCode::Divergent: return "Divergent";
    case ErrorCode::BadCdf: return "BadCdf";
    case ErrorCode::IllConditionedInformation: return "IllConditionedInformation";
    case ErrorCode::NotParametricNoise: return "NotParametricNoise";
    case ErrorCode::DegenerateSample: return "DegenerateSample";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::OutOfDomain: return "OutOfDomain";
    case ErrorCode::Config: return "Config";
  }
  return "Unknown";
}

/// Single exception type for the library; the code distinguishes failure
/// classes so callers (and the CLI exit-status mapping) can branch on it.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), message_(what) {}

  ErrorCode code() const noexcept { return code_; }
  /// The message without the code prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

}  // namespace dscore
