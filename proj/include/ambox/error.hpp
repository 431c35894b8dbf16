#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ambox {

enum class ErrorCode {
  InvalidReport,
  KeyUnavailable,
  MalformedKey,
  MalformedEnvelope,
  StorageFull,
  IoFailure,
  UnknownId,
  CorruptConfig,
  Unreachable,
  Unauthorized,
  SessionClosed,
  Timeout,
  LinkDown,
  ConnectionRefused,
  AlreadyRegistered,
  NotFound,
  IllegalState,
  InvalidArgument,
  LedgerNotConfigured,
  BufferNotDrained,
  TraceExhausted,
  ParseError,
  NonMonotonicOffsets,
  MalformedMessage,
  DeviceUnreachable,
  DeviceIllegalState,
  LedgerUnreachable,
  ScenarioInvalid,
  ConfigInvalid,
  PortInUse,
  DataDirUnwritable,
};

/// Kebab-case name used on the wire and in logs ("illegal-state", ...).
std::string_view to_string(ErrorCode code);
/// Inverse of to_string; nullopt for unknown names.
std::optional<ErrorCode> error_code_from_string(std::string_view name);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ambox
