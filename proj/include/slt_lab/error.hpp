#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace slt {

enum class ErrorCode {
  RankDeficient,
  NonFinite,
  EmptySeries,
  WindowTooLarge,
  InvalidConfig,
  DimensionMismatch,
  NotClassification,
  CountExceedsSteps,
  Diverged,
  AllChainsDiverged,
  UnknownExperiment,
  MissingValidationMetrics,
  FewerThanTwoTransitions,
  TooFewEvents,
  IoFailure,
  LayoutMismatch,
  Missing,
  ParseFailure,
  NoData,
  MissingCheckpoint,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::EmptySeries: return "EmptySeries";
    case ErrorCode::WindowTooLarge: return "WindowTooLarge";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NotClassification: return "NotClassification";
    case ErrorCode::CountExceedsSteps: return "CountExceedsSteps";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::AllChainsDiverged: return "AllChainsDiverged";
    case ErrorCode::UnknownExperiment: return "UnknownExperiment";
    case ErrorCode::MissingValidationMetrics: return "MissingValidationMetrics";
    case ErrorCode::FewerThanTwoTransitions: return "FewerThanTwoTransitions";
    case ErrorCode::TooFewEvents: return "TooFewEvents";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::LayoutMismatch: return "LayoutMismatch";
    case ErrorCode::Missing: return "Missing";
    case ErrorCode::ParseFailure: return "ParseFailure";
    case ErrorCode::NoData: return "NoData";
    case ErrorCode::MissingCheckpoint: return "MissingCheckpoint";
  }
  return "Unknown";
}

/// Exception type used throughout the library. The code is stable and
/// machine-readable; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace slt
