#pragma once

#include <stdexcept>
#include <string>

namespace pvga {

enum class ErrorKind {
  NotPositiveDefinite,
  Breakdown,
  RankTooLarge,
  SingularInnerSystem,
  DimensionMismatch,
  InvalidData,
  RateOverflow,
  UnknownProblem,
  InvalidAlpha,
  DimensionTooLarge,
  MaxIterationsExceeded,
  IllConditioned,
  NonpositiveDenominator,
  AlphaCollapse,
  InsufficientSamples,
  CovTooLargeForSampling,
  InvalidConfig,
  Io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorKind::Breakdown: return "BreakdownError";
    case ErrorKind::RankTooLarge: return "RankTooLarge";
    case ErrorKind::SingularInnerSystem: return "SingularInnerSystem";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::InvalidData: return "InvalidData";
    case ErrorKind::RateOverflow: return "RateOverflow";
    case ErrorKind::UnknownProblem: return "UnknownProblem";
    case ErrorKind::InvalidAlpha: return "InvalidAlpha";
    case ErrorKind::DimensionTooLarge: return "DimensionTooLarge";
    case ErrorKind::MaxIterationsExceeded: return "MaxIterationsExceeded";
    case ErrorKind::IllConditioned: return "IllConditioned";
    case ErrorKind::NonpositiveDenominator: return "NonpositiveDenominator";
    case ErrorKind::AlphaCollapse: return "AlphaCollapse";
    case ErrorKind::InsufficientSamples: return "InsufficientSamples";
    case ErrorKind::CovTooLargeForSampling: return "CovTooLargeForSampling";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::Io: return "IoError";
  }
  return "Unknown";
}

/// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  /// Usage and configuration problems map to exit code 2, everything else to 1.
  bool is_usage_error() const noexcept {
    return kind_ == ErrorKind::InvalidConfig || kind_ == ErrorKind::Io ||
           kind_ == ErrorKind::UnknownProblem;
  }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

}  // namespace pvga
