#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bbp {

enum class ErrorCode {
  InvalidGeometry,
  OutOfPool,
  DoubleFree,
  NotFound,
  InvalidRead,
  CyclicReference,
  InvalidSelector,
  OutOfDomain,
  NotOwner,
  VirtualWrite,
  ProtocolError,
  NonConvergence,
  InvalidNesting,
  BucketOverflow,
  TaskFailure,
  InvalidConfig,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidGeometry: return "InvalidGeometry";
    case ErrorCode::OutOfPool: return "OutOfPool";
    case ErrorCode::DoubleFree: return "DoubleFree";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::InvalidRead: return "InvalidRead";
    case ErrorCode::CyclicReference: return "CyclicReference";
    case ErrorCode::InvalidSelector: return "InvalidSelector";
    case ErrorCode::OutOfDomain: return "OutOfDomain";
    case ErrorCode::NotOwner: return "NotOwner";
    case ErrorCode::VirtualWrite: return "VirtualWrite";
    case ErrorCode::ProtocolError: return "ProtocolError";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::InvalidNesting: return "InvalidNesting";
    case ErrorCode::BucketOverflow: return "BucketOverflow";
    case ErrorCode::TaskFailure: return "TaskFailure";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

// All platform failures are reported through this type; code() is the
// stable surface tests and the CLI match on.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), detail_(what) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace bbp
