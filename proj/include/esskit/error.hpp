#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace esskit {

enum class ErrorCode {
  InvalidArgument,
  UnsupportedMeasure,
  IntegrationFailure,
  Singularity,
  NoInteriorMle,
  NotConverged,
  SingularMatrix,
  UnreliablePrior,
  EstimationFailure,
  TooManyFailures,
  LowCapturedMass,
  ReplicationCap,
  Timeout,
};

constexpr std::string_view code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::UnsupportedMeasure: return "UNSUPPORTED_MEASURE";
    case ErrorCode::IntegrationFailure: return "INTEGRATION_FAILURE";
    case ErrorCode::Singularity: return "SINGULARITY";
    case ErrorCode::NoInteriorMle: return "NO_INTERIOR_MLE";
    case ErrorCode::NotConverged: return "NOT_CONVERGED";
    case ErrorCode::SingularMatrix: return "SINGULAR_MATRIX";
    case ErrorCode::UnreliablePrior: return "UNRELIABLE_PRIOR";
    case ErrorCode::EstimationFailure: return "ESTIMATION_FAILURE";
    case ErrorCode::TooManyFailures: return "TOO_MANY_FAILURES";
    case ErrorCode::LowCapturedMass: return "LOW_CAPTURED_MASS";
    case ErrorCode::ReplicationCap: return "REPLICATION_CAP";
    case ErrorCode::Timeout: return "TIMEOUT";
  }
  return "UNKNOWN";
}

/// Base exception for every failure raised by the library. Usage errors
/// (bad parameters or an unknown measure) map to exit code 2 / HTTP 400;
/// everything else is a computation failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  bool is_usage_error() const noexcept {
    return code_ == ErrorCode::InvalidArgument || code_ == ErrorCode::UnsupportedMeasure;
  }

 private:
  ErrorCode code_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw Error(ErrorCode::InvalidArgument, message);
}

}  // namespace esskit
