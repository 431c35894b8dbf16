#include "ambox/error.hpp"

namespace ambox {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidReport: return "invalid-report";
    case ErrorCode::KeyUnavailable: return "key-unavailable";
    case ErrorCode::MalformedKey: return "malformed-key";
    case ErrorCode::MalformedEnvelope: return "malformed-envelope";
    case ErrorCode::StorageFull: return "storage-full";
    case ErrorCode::IoFailure: return "io-failure";
    case ErrorCode::UnknownId: return "unknown-id";
    case ErrorCode::CorruptConfig: return "corrupt-config";
    case ErrorCode::Unreachable: return "unreachable";
    case ErrorCode::Unauthorized: return "unauthorized";
    case ErrorCode::SessionClosed: return "session-closed";
    case ErrorCode::Timeout: return "timeout";
    case ErrorCode::LinkDown: return "link-down";
    case ErrorCode::ConnectionRefused: return "connection-refused";
    case ErrorCode::AlreadyRegistered: return "already-registered";
    case ErrorCode::NotFound: return "not-found";
    case ErrorCode::IllegalState: return "illegal-state";
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::LedgerNotConfigured: return "ledger-not-configured";
    case ErrorCode::BufferNotDrained: return "buffer-not-drained";
    case ErrorCode::TraceExhausted: return "trace-exhausted";
    case ErrorCode::ParseError: return "parse-error";
    case ErrorCode::NonMonotonicOffsets: return "non-monotonic-offsets";
    case ErrorCode::MalformedMessage: return "malformed-message";
    case ErrorCode::DeviceUnreachable: return "device-unreachable";
    case ErrorCode::DeviceIllegalState: return "device-illegal-state";
    case ErrorCode::LedgerUnreachable: return "ledger-unreachable";
    case ErrorCode::ScenarioInvalid: return "scenario-invalid";
    case ErrorCode::ConfigInvalid: return "config-invalid";
    case ErrorCode::PortInUse: return "port-in-use";
    case ErrorCode::DataDirUnwritable: return "data-dir-unwritable";
  }
  return "unknown";
}

std::optional<ErrorCode> error_code_from_string(std::string_view name) {
  for (int i = 0; i <= static_cast<int>(ErrorCode::DataDirUnwritable); ++i) {
    auto c = static_cast<ErrorCode>(i);
    if (to_string(c) == name) return c;
  }
  return std::nullopt;
}

Error::Error(ErrorCode code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + (detail.empty() ? "" : ": " + detail)),
      code_(code) {}

}  // namespace ambox
