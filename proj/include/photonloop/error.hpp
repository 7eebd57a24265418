#pragma once

#include <stdexcept>
#include <string>

namespace photonloop {

enum class ErrorCode {
  InvalidArgument,
  UnsupportedSource,
  NonConvergence,
  DivergentLoop,
  GuardExceeded,
  UnsortedStream,
  NoSyncRecords,
  DegenerateDenominator,
  AllDegenerate,
  SaturatedBin,
  BelowNoise,
  NoValidBins,
  FitDiverged,
  SaturatedFirstBin,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised when a value violates a domain invariant. field() names the
// offending field so front ends can report it.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& what)
      : Error(ErrorCode::InvalidArgument, what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace photonloop
