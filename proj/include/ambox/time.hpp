#pragma once

#include <chrono>
#include <cstdint>
#include <string>
#include <string_view>

namespace ambox {

using Duration = std::chrono::milliseconds;
using Timestamp = std::chrono::sys_time<Duration>;

using namespace std::chrono_literals;

/// RFC 3339 UTC with exactly three fractional digits, e.g. 2025-01-01T00:00:00.000Z.
std::string format_rfc3339(Timestamp t);

/// Accepts the form produced by format_rfc3339 (a trailing 'Z' is required).
/// Throws Error(ParseError) on anything else.
Timestamp parse_rfc3339(std::string_view text);

inline std::int64_t to_millis(Timestamp t) { return t.time_since_epoch().count(); }
inline Timestamp from_millis(std::int64_t ms) { return Timestamp{Duration{ms}}; }

/// "250ms", "30s", "5m", "2h" or a bare number of seconds.
Duration parse_duration(std::string_view text);

/// Start of simulated scenarios unless a scenario overrides it.
inline constexpr std::int64_t kDefaultEpochMillis = 1735689600000;  // 2025-01-01T00:00:00Z

}  // namespace ambox
