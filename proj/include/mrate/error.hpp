#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace mrate {

// One code per failure class. The CLI maps each to a distinct exit status.
enum class ErrorCode {
  Usage,
  Io,
  InvalidInput,
  EmptyGroup,
  NonBinaryTreatment,
  NonFinite,
  DimensionMismatch,
  NonConvergence,
  SingularSystem,
  DegeneratePS,
  TooManyFailures,
  SingularDesign,
  OracleUnavailable,
  OneClassOnly,
  ImbalanceExhausted,
  AllReplicationsFailed,
  InvalidScenario,
};

std::string_view error_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, nlohmann::json diagnostics = nlohmann::json::object())
      : std::runtime_error(message), code_(code), diagnostics_(std::move(diagnostics)) {}

  ErrorCode code() const noexcept { return code_; }
  const nlohmann::json& diagnostics() const noexcept { return diagnostics_; }

 private:
  ErrorCode code_;
  nlohmann::json diagnostics_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message,
                              nlohmann::json diagnostics = nlohmann::json::object()) {
  throw Error(code, message, std::move(diagnostics));
}

}  // namespace mrate
